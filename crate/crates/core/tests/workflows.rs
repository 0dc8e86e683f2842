use std::sync::Arc;

use forcedvi::disc_qq::{midpoint_data_qq, trapezoid_data_qq};
use forcedvi::disc_tq::{exact_discrete_data_tq, quadrature_discrete_data, truncated_exact_friction, AlphaPair, DiscretizationTq, QuadRule};
use forcedvi::order_lab::{
    correspondence_check_with, default_h_grid, estimate_order, exactness_check, flow_error, order_of_flow_experiment,
    parallel_map, FitOptions, Stepper, Verdict,
};
use forcedvi::stepper::run_trajectory;
use forcedvi::{systems, FlowOracle, SolverSettings, StateTq};
use serde_json::Value;

fn settings() -> SolverSettings {
    SolverSettings::default()
}

fn s0() -> StateTq {
    StateTq::scalar(0.0, 1.0)
}

fn particle() -> FlowOracle {
    FlowOracle::analytic(systems::damped_particle(1.0), settings()).unwrap()
}

#[test]
fn truncated_friction_slopes_follow_r() {
    let oracle = particle();
    for (r, target) in [(1usize, 2.0), (3, 4.0)] {
        let (disc, data) = truncated_exact_friction(1.0, r).unwrap();
        let rep = order_of_flow_experiment(&Stepper::Tq { data: Arc::new(data), disc }, &oracle, r, &s0(), &default_h_grid(), &settings())
            .unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        assert!((rep.slope - target).abs() < 0.1, "r = {r}: slope {}", rep.slope);
    }
}

#[test]
fn exact_data_is_reported_as_exact() {
    let oracle = particle();
    let d = DiscretizationTq::exact(oracle.clone(), AlphaPair::one_sided());
    let data = exact_discrete_data_tq(oracle.clone(), AlphaPair::one_sided(), &settings());
    let rep = order_of_flow_experiment(&Stepper::Tq { data: Arc::new(data), disc: d }, &oracle, 2, &s0(), &default_h_grid(), &settings())
        .unwrap();
    assert!(rep.exact_to_noise);
    assert_eq!(rep.verdict, Verdict::Inconclusive);
    assert!(rep.slope.is_nan());
}

#[test]
fn numeric_oracle_exactness_on_the_oscillator() {
    let oracle = FlowOracle::numeric(systems::forced_oscillator(1.0, 0.3), settings()).unwrap();
    let rep = exactness_check(&oracle, 0.1, &s0(), 5, &settings()).unwrap();
    assert!(rep.ok);
    assert!(rep.max_position_gap <= 1e-7);
}

#[test]
fn mismatched_rules_do_not_correspond() {
    let sys = systems::forced_pendulum(9.81, 0.3, 0.2);
    let lin = DiscretizationTq::linear(1);
    let tq = quadrature_discrete_data(sys.clone(), lin.clone(), QuadRule::Midpoint).unwrap();
    let qq = trapezoid_data_qq(sys);
    let hs = default_h_grid();
    let rep = correspondence_check_with(&tq, &lin, &qq, &hs, &StateTq::scalar(0.3, 0.8), &settings()).unwrap();
    assert!(!rep.ok);
    let gaps: Vec<f64> = rep.entries.iter().map(|e| e.position_gap).collect();
    let fit = estimate_order(&hs, &gaps, &FitOptions { floor: 1e-14, ..FitOptions::plain(&settings()) }).unwrap();
    assert!(fit.slope >= 2.75, "slope {}", fit.slope);
}

#[test]
fn midpoint_long_run_is_second_order() {
    let oracle = particle();
    let data = midpoint_data_qq(oracle.system().clone());
    let err = |h: f64, n: usize| {
        let q1 = oracle.flow(h, &s0()).unwrap().q;
        let traj = run_trajectory(&data, h, &s0().q, &q1, n, &settings()).unwrap();
        (&traj.positions[n] - oracle.flow(h * n as f64, &s0()).unwrap().q).amax()
    };
    let coarse = err(0.05, 100);
    let fine = err(0.025, 200);
    assert!(coarse < 0.05 * 0.05, "{coarse}");
    let ratio = coarse / fine;
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn midpoint_one_step_errors_match_pinned_values() {
    let pinned: Value = serde_json::from_str(include_str!("data/midpoint_damped_particle.json")).unwrap();
    let oracle = particle();
    let stepper = Stepper::Qq { data: Arc::new(midpoint_data_qq(oracle.system().clone())) };
    for point in pinned["points"].as_array().unwrap() {
        let h = point["h"].as_f64().unwrap();
        let expected = point["error"].as_f64().unwrap();
        let got = flow_error(&stepper, &oracle, h, &s0(), &settings()).unwrap().error;
        assert!((got - expected).abs() <= 1e-9 * expected, "h = {h}: {got} vs {expected}");
    }
}

#[test]
fn worker_pool_is_deterministic() {
    let oracle = particle();
    let stepper = Stepper::Qq { data: Arc::new(midpoint_data_qq(oracle.system().clone())) };
    let hs = default_h_grid();
    let run = |threads| {
        parallel_map(&hs, threads, |&h| flow_error(&stepper, &oracle, h, &s0(), &settings()).unwrap().error)
    };
    let serial = run(1);
    for threads in [2, 3, 8] {
        assert_eq!(run(threads), serial);
    }
}
