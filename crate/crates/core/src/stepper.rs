//! One-step maps and discrete trajectories.
//!
//! On Q×Q a step solves the discrete Lagrange–D'Alembert equation for the next
//! position. On TQ a step solves the matching condition `∂⁺_h(s) = ∂⁻_h(ṽ)` together with
//! criticality of `μ(s)(δv) + μ(ṽ)(δṽ)` over the n-dimensional space of variations that
//! keep the outer endpoints fixed and the shared endpoint matched.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::disc_qq::DiscreteDataQq;
use crate::disc_tq::{DiscreteDataTq, DiscretizationTq};
use crate::error::{Error, Result};
use crate::fms::StateTq;
use crate::numeric::{newton_fd, NewtonOptions, NewtonOutcome};
use crate::settings::SolverSettings;

/// A discrete path `q_0, ..., q_N` with per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDiscrete {
    pub h: f64,
    pub positions: Vec<DVector<f64>>,
    /// Discrete Lagrange–D'Alembert residual at each interior point, length N − 1.
    pub residual_norms: Vec<f64>,
    /// Newton iterations per step, length N − 1.
    pub iterations: Vec<usize>,
}

/// Diagnostics of a single implicit step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub residual_norm: f64,
    pub iterations: usize,
    /// Max-norm distance between the solution and the initial guess it was reached from.
    pub distance_to_guess: f64,
    /// True when the first Newton run failed and the predictor restart succeeded.
    pub retried: bool,
}

/// `D₂L_d(q0, q1) + D₁L_d(q1, q2) + f⁺(q0, q1) + f⁻(q1, q2)`.
pub fn del_residual(
    d: &dyn DiscreteDataQq,
    h: f64,
    q0: &DVector<f64>,
    q1: &DVector<f64>,
    q2: &DVector<f64>,
) -> Result<DVector<f64>> {
    let back = d.evaluate(h, q0, q1)?;
    let front = d.evaluate(h, q1, q2)?;
    Ok(back.momentum_plus() - front.momentum_minus())
}

fn newton_opts(settings: &SolverSettings) -> NewtonOptions {
    NewtonOptions::new(settings.newton_tol, settings.newton_max_iter)
}

/// Runs Newton from `guess`, then once more from `retry` if the first attempt fails.
fn solve_with_retry<F>(
    residual: F,
    guess: DVector<f64>,
    retry: Option<DVector<f64>>,
    settings: &SolverSettings,
) -> Result<(NewtonOutcome, StepReport)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let run = |x0: DVector<f64>| newton_fd(&residual, x0, newton_opts(settings), settings.fd_step_scale);
    let (out, start, retried) = match run(guess.clone()) {
        Ok(out) => (out, guess, false),
        Err(first) => match retry {
            Some(r) => (run(r.clone())?, r, true),
            None => return Err(first),
        },
    };
    let report = StepReport {
        residual_norm: out.residual_norm,
        iterations: out.iterations,
        distance_to_guess: (&out.x - &start).amax(),
        retried,
    };
    Ok((out, report))
}

pub fn step_qq(
    d: &dyn DiscreteDataQq,
    h: f64,
    q0: &DVector<f64>,
    q1: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<DVector<f64>> {
    Ok(step_qq_detailed(d, h, q0, q1, settings)?.0)
}

/// Solves the discrete Lagrange–D'Alembert equation for `q2`.
pub fn step_qq_detailed(
    d: &dyn DiscreteDataQq,
    h: f64,
    q0: &DVector<f64>,
    q1: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<(DVector<f64>, StepReport)> {
    if h == 0.0 {
        return Err(Error::ZeroStep);
    }
    let back = d.evaluate(h, q0, q1)?.momentum_plus();
    let residual = |q2: &DVector<f64>| Ok(&back - d.evaluate(h, q1, q2)?.momentum_minus());
    let guess = q1 * 2.0 - q0;
    let retry = d.system().and_then(|sys| {
        let a = sys.el_acceleration(&StateTq { q: q1.clone(), v: (q1 - q0) / h }).ok()?;
        Some(&guess + a * (h * h))
    });
    let (out, report) = solve_with_retry(residual, guess, retry, settings)?;
    Ok((out.x, report))
}

/// Second-block weighting of the TQ criticality residual. The covector `μ` scales like
/// `h`, so dividing by `|h|` keeps both blocks of comparable size as `h → 0`.
fn criticality_scale(h: f64) -> f64 {
    1.0 / h.abs()
}

/// Constraint matrix on `(δv, δṽ)`: `T∂⁻(δv) = 0`, `T∂⁺(δṽ) = 0`, `T∂⁺(δv) = T∂⁻(δṽ)`.
fn constraint_matrix(d: &DiscretizationTq, h: f64, s: &StateTq, t: &StateTq) -> Result<DMatrix<f64>> {
    let n = d.dim();
    let m = 2 * n;
    let (jm_s, jp_s) = d.boundary_jacobians(h, s)?;
    let (jm_t, jp_t) = d.boundary_jacobians(h, t)?;
    let mut c = DMatrix::zeros(3 * n, 2 * m);
    c.view_mut((0, 0), (n, m)).copy_from(&jm_s);
    c.view_mut((n, m), (n, m)).copy_from(&jp_t);
    c.view_mut((2 * n, 0), (n, m)).copy_from(&jp_s);
    c.view_mut((2 * n, m), (n, m)).copy_from(&(-jm_t));
    Ok(c)
}

/// Orthogonal projector onto the null space of `c`, after checking that the null space
/// has dimension `expected`.
fn null_projector(c: &DMatrix<f64>, expected: usize) -> Result<DMatrix<f64>> {
    let cols = c.ncols();
    let svd = c.clone().svd(false, true);
    let vt = svd.v_t.as_ref().ok_or(Error::SingularJacobian)?;
    let sv = &svd.singular_values;
    let top = sv.max();
    let rank = sv.iter().filter(|&&x| x > 1e-10 * top.max(f64::MIN_POSITIVE)).count();
    if cols - rank != expected {
        return Err(Error::DegenerateVariationSpace { found: cols - rank, expected });
    }
    let mut p = DMatrix::identity(cols, cols);
    for (i, &sigma) in sv.iter().enumerate() {
        if sigma > 1e-10 * top {
            let row = vt.row(i);
            p -= row.transpose() * row;
        }
    }
    Ok(p)
}

pub fn step_tq(
    data: &dyn DiscreteDataTq,
    d: &DiscretizationTq,
    h: f64,
    s: &StateTq,
    settings: &SolverSettings,
) -> Result<StateTq> {
    Ok(step_tq_detailed(data, d, h, s, settings)?.0)
}

/// Solves the TQ criticality system for `ṽ`.
pub fn step_tq_detailed(
    data: &dyn DiscreteDataTq,
    d: &DiscretizationTq,
    h: f64,
    s: &StateTq,
    settings: &SolverSettings,
) -> Result<(StateTq, StepReport)> {
    if h == 0.0 {
        return Err(Error::ZeroStep);
    }
    let n = d.dim();
    Error::check_dim(n, s.dim())?;
    Error::check_dim(n, data.dim())?;
    let m = 2 * n;
    let anchor = d.boundary_plus(h, s)?;
    let mu_s = data.evaluate(h, s)?.mu();
    let scale = criticality_scale(h);

    let guess = StateTq { q: anchor.clone(), v: s.v.clone() };
    // frozen basis of the variation space at the initial guess
    let p0 = null_projector(&constraint_matrix(d, h, s, &guess)?, n)?;
    let qr = p0.col_piv_qr();
    let basis = qr.q().columns(0, n).into_owned();

    let residual = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let t = StateTq::from_vector(x);
        let p = null_projector(&constraint_matrix(d, h, s, &t)?, n)?;
        let mut w = DVector::zeros(2 * m);
        w.rows_mut(0, m).copy_from(&mu_s);
        w.rows_mut(m, m).copy_from(&data.evaluate(h, &t)?.mu());
        let mut r = DVector::zeros(m);
        r.rows_mut(0, n).copy_from(&(d.boundary_minus(h, &t)? - &anchor));
        r.rows_mut(n, n).copy_from(&(basis.transpose() * (p * w) * scale));
        Ok(r)
    };

    let retry = data.system().and_then(|sys| {
        let a = sys.el_acceleration(s).ok()?;
        Some(StateTq { q: anchor.clone(), v: &s.v + a * h }.to_vector())
    });
    let (out, report) = solve_with_retry(residual, guess.to_vector(), retry, settings)?;
    Ok((StateTq::from_vector(&out.x), report))
}

/// Finds `q1` whose discrete momentum at `q0` matches the continuous momentum of `(q0, v0)`.
pub fn initialize_from_state(
    d: &dyn DiscreteDataQq,
    sys: &crate::fms::System,
    h: f64,
    q0: &DVector<f64>,
    v0: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<DVector<f64>> {
    if h == 0.0 {
        return Err(Error::ZeroStep);
    }
    let p0 = sys.fiber_derivative(&StateTq { q: q0.clone(), v: v0.clone() })?;
    let residual = |q1: &DVector<f64>| Ok(&p0 - d.evaluate(h, q0, q1)?.momentum_minus());
    let (out, _) = solve_with_retry(residual, q0 + v0 * h, None, settings)?;
    Ok(out.x)
}

/// Iterates [`step_qq`] from `(q0, q1)` for a path of `N + 1` positions.
pub fn run_trajectory(
    d: &dyn DiscreteDataQq,
    h: f64,
    q0: &DVector<f64>,
    q1: &DVector<f64>,
    n_steps: usize,
    settings: &SolverSettings,
) -> Result<TrajectoryDiscrete> {
    if n_steps < 2 {
        return Err(Error::InvalidArgument("a discrete trajectory needs N >= 2".into()));
    }
    let mut traj = TrajectoryDiscrete {
        h,
        positions: vec![q0.clone(), q1.clone()],
        residual_norms: Vec::with_capacity(n_steps - 1),
        iterations: Vec::with_capacity(n_steps - 1),
    };
    for k in 1..n_steps {
        let (a, b) = (&traj.positions[k - 1], &traj.positions[k]);
        match step_qq_detailed(d, h, a, b, settings) {
            Ok((next, report)) => {
                traj.positions.push(next);
                traj.residual_norms.push(report.residual_norm);
                traj.iterations.push(report.iterations);
            }
            Err(e) => {
                return Err(Error::TrajectoryAborted { step: k, partial: Box::new(traj), source: Box::new(e) })
            }
        }
    }
    Ok(traj)
}

/// A TQ trajectory `s_0, ..., s_N` with per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTq {
    pub h: f64,
    pub states: Vec<StateTq>,
    pub reports: Vec<StepReport>,
}

pub fn run_trajectory_tq(
    data: &dyn DiscreteDataTq,
    d: &DiscretizationTq,
    h: f64,
    s0: &StateTq,
    n_steps: usize,
    settings: &SolverSettings,
) -> Result<TrajectoryTq> {
    if n_steps < 1 {
        return Err(Error::InvalidArgument("a TQ trajectory needs N >= 1".into()));
    }
    let mut traj = TrajectoryTq { h, states: vec![s0.clone()], reports: Vec::with_capacity(n_steps) };
    for k in 0..n_steps {
        let (next, report) = step_tq_detailed(data, d, h, &traj.states[k], settings)?;
        traj.states.push(next);
        traj.reports.push(report);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disc_qq::{exact_discrete_data_qq, midpoint_data_qq};
    use crate::disc_tq::{exact_discrete_data_tq, quadrature_discrete_data, AlphaPair, QuadRule};
    use crate::flow::FlowOracle;
    use crate::systems;
    use approx::assert_relative_eq;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    /// Closed-form midpoint step of the damped particle.
    fn midpoint_next(alpha: f64, h: f64, q0: f64, q1: f64) -> f64 {
        q1 + (q1 - q0) * (1.0 - 0.5 * alpha * h) / (1.0 + 0.5 * alpha * h)
    }

    #[test]
    fn midpoint_damped_residual_examples() {
        let d = midpoint_data_qq(systems::damped_particle(1.0));
        let q2 = midpoint_next(1.0, 0.1, 0.0, 0.1);
        assert_relative_eq!(q2, 0.190_476_190_48, epsilon = 1e-11);
        let r = del_residual(&d, 0.1, &v1(0.0), &v1(0.1), &v1(q2)).unwrap();
        assert!(r[0].abs() <= 1e-12);
        let r = del_residual(&d, 0.1, &v1(0.0), &v1(0.1), &v1(q2 + 1e-3)).unwrap();
        assert_relative_eq!(r[0], -0.0105, epsilon = 1e-12);
        let step = step_qq(&d, 0.1, &v1(0.0), &v1(0.1), &settings()).unwrap();
        assert_relative_eq!(step[0], q2, epsilon = 1e-12);
    }

    #[test]
    fn free_particle_steps_are_straight() {
        let d = midpoint_data_qq(systems::free_particle(1));
        let r = del_residual(&d, 0.2, &v1(0.0), &v1(0.3), &v1(0.6)).unwrap();
        assert!(r[0].abs() <= 1e-14);
        let (q2, report) = step_qq_detailed(&d, 0.2, &v1(0.0), &v1(0.3), &settings()).unwrap();
        assert_relative_eq!(q2[0], 0.6, epsilon = 1e-14);
        assert!(report.iterations <= 1);
        let traj = run_trajectory(&d, 0.2, &v1(0.0), &v1(0.3), 10, &settings()).unwrap();
        assert_eq!(traj.positions.len(), 11);
        assert!(traj.residual_norms.iter().all(|r| *r <= 1e-13));
    }

    #[test]
    fn exact_qq_step_follows_flow() {
        let oracle = FlowOracle::analytic(systems::damped_particle(1.0), settings()).unwrap();
        let d = exact_discrete_data_qq(oracle, &settings());
        let q1 = 1.0 - (-0.1f64).exp();
        let q2 = step_qq(&d, 0.1, &v1(0.0), &v1(q1), &settings()).unwrap();
        assert_relative_eq!(q2[0], 1.0 - (-0.2f64).exp(), epsilon = 1e-8);
    }

    #[test]
    fn exact_tq_step_is_the_flow() {
        let oracle = FlowOracle::analytic(systems::damped_particle(1.0), settings()).unwrap();
        let disc = crate::disc_tq::DiscretizationTq::exact(oracle.clone(), AlphaPair::one_sided());
        let data = exact_discrete_data_tq(oracle.clone(), AlphaPair::one_sided(), &settings());
        for (h, s) in [(0.1, StateTq::scalar(0.0, 1.0)), (0.3, StateTq::scalar(0.5, -0.7))] {
            let out = step_tq(&data, &disc, h, &s, &settings()).unwrap();
            assert!(out.distance(&oracle.flow(h, &s).unwrap()) <= 1e-8);
        }
    }

    #[test]
    fn free_particle_linear_tq_step() {
        let sys = systems::free_particle(2);
        let disc = crate::disc_tq::DiscretizationTq::linear(2);
        let data = quadrature_discrete_data(sys, disc.clone(), QuadRule::Midpoint).unwrap();
        let s = StateTq::from_slices(&[0.1, -0.2], &[1.0, 0.5]).unwrap();
        let out = step_tq(&data, &disc, 0.25, &s, &settings()).unwrap();
        assert_relative_eq!(out.q, &s.q + &s.v * 0.25, epsilon = 1e-12);
        assert_relative_eq!(out.v, s.v, epsilon = 1e-12);
    }

    #[test]
    fn initialization_examples() {
        let oracle = FlowOracle::analytic(systems::damped_particle(1.0), settings()).unwrap();
        let sys = oracle.system().clone();
        let exact = exact_discrete_data_qq(oracle, &settings());
        let q1 = initialize_from_state(&exact, &sys, 0.2, &v1(0.3), &v1(1.5), &settings()).unwrap();
        assert_relative_eq!(q1[0], 0.3 + 1.5 * (1.0 - (-0.2f64).exp()), epsilon = 1e-8);
        let rest = initialize_from_state(&exact, &sys, 0.2, &v1(0.3), &v1(0.0), &settings()).unwrap();
        assert_relative_eq!(rest[0], 0.3, epsilon = 1e-12);
        let free = systems::free_particle(1);
        let mid = midpoint_data_qq(free.clone());
        let q1 = initialize_from_state(&mid, &free, 0.1, &v1(1.0), &v1(2.0), &settings()).unwrap();
        assert_relative_eq!(q1[0], 1.2, epsilon = 1e-12);
    }

    #[test]
    fn trajectory_of_two_points_is_one_step() {
        let d = midpoint_data_qq(systems::damped_particle(1.0));
        let traj = run_trajectory(&d, 0.1, &v1(0.0), &v1(0.1), 2, &settings()).unwrap();
        let q2 = step_qq(&d, 0.1, &v1(0.0), &v1(0.1), &settings()).unwrap();
        assert_eq!(traj.positions[2], q2);
        assert!(run_trajectory(&d, 0.1, &v1(0.0), &v1(0.1), 1, &settings()).is_err());
    }

    #[test]
    fn abort_keeps_partial_trajectory() {
        // L_d with no critical point once the path leaves [-1, 1]
        let d = crate::disc_qq::FnDataQq::new(
            1,
            "walls",
            |h, q0, q1| {
                if q1[0].abs() > 1.0 {
                    return Err(Error::NonFinite { what: "wall" });
                }
                Ok((q1[0] - q0[0]).powi(2) / (2.0 * h))
            },
            |_, _, _| Ok((v1(0.0), v1(0.0))),
        );
        let err = run_trajectory(&d, 0.5, &v1(0.0), &v1(0.4), 6, &settings()).unwrap_err();
        match err {
            Error::TrajectoryAborted { step, partial, .. } => {
                assert_eq!(step, 2);
                assert_eq!(partial.positions.len(), 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degenerate_variation_space_is_reported() {
        // a curve family that ignores the velocity makes ∂⁺ independent of v
        struct Frozen;
        impl crate::disc_tq::CurveFamily for Frozen {
            fn dim(&self) -> usize {
                1
            }
            fn position(&self, _h: f64, _t: f64, s: &StateTq) -> Result<DVector<f64>> {
                Ok(s.q.clone())
            }
        }
        let disc = crate::disc_tq::DiscretizationTq::custom(Frozen, AlphaPair::one_sided());
        let data = crate::disc_tq::FnDataTq::new(1, "zero", |_, _| Ok(0.0), |_, _| Ok(DVector::zeros(2)));
        let err = step_tq(&data, &disc, 0.1, &StateTq::scalar(0.0, 1.0), &settings()).unwrap_err();
        assert!(matches!(err, Error::DegenerateVariationSpace { expected: 1, .. }));
    }
}
