//! Ground-truth flow of a forced mechanical system and its tangent map.
//!
//! The numeric mode integrates `q' = v, v' = a(q, v)` with classical RK4 at a fixed
//! step, doubling the step count until two successive estimates agree. The tangent
//! map is obtained by integrating the variational equations alongside the base flow.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fms::{StateTq, System};
use crate::settings::SolverSettings;

/// Upper bound on the number of RK4 steps per call.
pub const MAX_STEPS: usize = 1 << 20;
/// Agreement required of the tangent block when its Jacobian comes from finite differences.
pub const FD_TANGENT_TOL: f64 = 1e-9;
/// Initial RK4 step length before halving.
const INITIAL_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    Analytic,
    Numeric,
}

#[derive(Debug, Clone)]
pub struct FlowOracle {
    sys: System,
    mode: FlowMode,
    settings: SolverSettings,
}

impl FlowOracle {
    pub fn new(sys: System, mode: FlowMode, settings: SolverSettings) -> Result<Self> {
        settings.validate()?;
        if mode == FlowMode::Analytic && sys.closed_form().is_none() {
            return Err(Error::NoClosedForm { system: sys.name().to_string() });
        }
        Ok(Self { sys, mode, settings })
    }

    pub fn analytic(sys: System, settings: SolverSettings) -> Result<Self> {
        Self::new(sys, FlowMode::Analytic, settings)
    }

    pub fn numeric(sys: System, settings: SolverSettings) -> Result<Self> {
        Self::new(sys, FlowMode::Numeric, settings)
    }

    /// Closed form when the system has one, ODE integration otherwise.
    pub fn best(sys: System, settings: SolverSettings) -> Result<Self> {
        let mode = if sys.closed_form().is_some() { FlowMode::Analytic } else { FlowMode::Numeric };
        Self::new(sys, mode, settings)
    }

    pub fn system(&self) -> &System {
        &self.sys
    }

    pub fn mode(&self) -> FlowMode {
        self.mode
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    fn check(&self, t: f64, s: &StateTq) -> Result<()> {
        Error::check_dim(self.sys.dim(), s.dim())?;
        if !t.is_finite() {
            return Err(Error::NonFinite { what: "flow time" });
        }
        Ok(())
    }

    pub fn flow(&self, t: f64, s: &StateTq) -> Result<StateTq> {
        self.check(t, s)?;
        if t == 0.0 {
            return Ok(s.clone());
        }
        match self.mode {
            FlowMode::Analytic => Ok(self.closed_form().flow(t, s)),
            FlowMode::Numeric => {
                let x = self.halving(t, s.to_vector(), |x, dt, steps| self.rk4_base(x, dt, steps))?;
                Ok(StateTq::from_vector(&x))
            }
        }
    }

    /// Flow together with the full 2n×2n tangent matrix `T_s F_t`.
    pub fn flow_with_tangent(&self, t: f64, s: &StateTq) -> Result<(StateTq, DMatrix<f64>)> {
        self.check(t, s)?;
        let m = 2 * self.sys.dim();
        if t == 0.0 {
            return Ok((s.clone(), DMatrix::identity(m, m)));
        }
        match self.mode {
            FlowMode::Analytic => {
                let cf = self.closed_form();
                Ok((cf.flow(t, s), cf.tangent(t, s)))
            }
            FlowMode::Numeric => {
                // augmented state: base point followed by the column-major tangent matrix
                let mut x0 = DVector::zeros(m + m * m);
                x0.rows_mut(0, m).copy_from(&s.to_vector());
                for i in 0..m {
                    x0[m + i * m + i] = 1.0;
                }
                let x = self.halving_augmented(t, x0)?;
                let state = StateTq::from_vector(&x.rows(0, m).into_owned());
                let phi = DMatrix::from_column_slice(m, m, x.rows(m, m * m).as_slice());
                Ok((state, phi))
            }
        }
    }

    /// `T_s F_t (ds)` for a tangent vector `ds = (δq, δv)`.
    pub fn tangent_flow(&self, t: f64, s: &StateTq, ds: &DVector<f64>) -> Result<DVector<f64>> {
        Error::check_dim(2 * self.sys.dim(), ds.len())?;
        let (_, phi) = self.flow_with_tangent(t, s)?;
        Ok(phi * ds)
    }

    /// States at `t = 0, h, ..., N h`, built by composing single-`h` flows.
    pub fn sample_trajectory(&self, s0: &StateTq, h: f64, n: usize) -> Result<Vec<StateTq>> {
        if n < 1 {
            return Err(Error::InvalidArgument("sample_trajectory needs N >= 1".into()));
        }
        if h.is_nan() || h <= 0.0 {
            return Err(Error::InvalidArgument(format!("sample step must be positive, got {h}")));
        }
        let mut out = Vec::with_capacity(n + 1);
        out.push(s0.clone());
        for k in 0..n {
            let next = self.flow(h, &out[k])?;
            out.push(next);
        }
        Ok(out)
    }

    fn closed_form(&self) -> &dyn crate::fms::ClosedFormFlow {
        self.sys.closed_form().expect("checked at construction").as_ref()
    }

    fn halving<F>(&self, t: f64, x0: DVector<f64>, integrate: F) -> Result<DVector<f64>>
    where
        F: Fn(&DVector<f64>, f64, usize) -> Result<DVector<f64>>,
    {
        let mut steps = ((t.abs() / INITIAL_STEP).ceil() as usize).max(1);
        let mut coarse = integrate(&x0, t / steps as f64, steps)?;
        let mut difference = f64::INFINITY;
        while steps < MAX_STEPS {
            steps *= 2;
            let fine = integrate(&x0, t / steps as f64, steps)?;
            difference = (&fine - &coarse).amax();
            if difference <= self.settings.ode_tol * (1.0 + fine.amax()) {
                return Ok(fine);
            }
            coarse = fine;
        }
        Err(Error::NoConvergence { steps, difference })
    }

    /// Step doubling for the augmented system. The base block must agree to `ode_tol`;
    /// when the acceleration Jacobian is finite-differenced its roundoff caps the
    /// attainable agreement of the tangent block, so that block uses a looser bound.
    fn halving_augmented(&self, t: f64, x0: DVector<f64>) -> Result<DVector<f64>> {
        let m = 2 * self.sys.dim();
        let tangent_tol = if self.sys.has_acceleration_jacobian() {
            self.settings.ode_tol
        } else {
            self.settings.ode_tol.max(FD_TANGENT_TOL)
        };
        let mut steps = ((t.abs() / INITIAL_STEP).ceil() as usize).max(1);
        let mut coarse = self.rk4_augmented(&x0, t / steps as f64, steps)?;
        let mut difference = f64::INFINITY;
        while steps < MAX_STEPS {
            steps *= 2;
            let fine = self.rk4_augmented(&x0, t / steps as f64, steps)?;
            let delta = &fine - &coarse;
            let base_diff = delta.rows(0, m).amax();
            let tangent_diff = delta.rows(m, m * m).amax();
            difference = base_diff.max(tangent_diff);
            let base_ok = base_diff <= self.settings.ode_tol * (1.0 + fine.rows(0, m).amax());
            let tangent_ok = tangent_diff <= tangent_tol * (1.0 + fine.rows(m, m * m).amax());
            if base_ok && tangent_ok {
                return Ok(fine);
            }
            coarse = fine;
        }
        Err(Error::NoConvergence { steps, difference })
    }

    fn base_rhs(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.sys.dim();
        let s = StateTq::from_vector(x);
        let a = self.sys.el_acceleration(&s)?;
        let mut dx = DVector::zeros(2 * n);
        dx.rows_mut(0, n).copy_from(&s.v);
        dx.rows_mut(n, n).copy_from(&a);
        Ok(dx)
    }

    fn augmented_rhs(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.sys.dim();
        let m = 2 * n;
        let base = x.rows(0, m).into_owned();
        let s = StateTq::from_vector(&base);
        let mut out = DVector::zeros(m + m * m);
        out.rows_mut(0, m).copy_from(&self.base_rhs(&base)?);
        let jac = self.sys.acceleration_jacobian(&s)?;
        let phi = DMatrix::from_column_slice(m, m, x.rows(m, m * m).as_slice());
        // d/dt Φ = [[0, I], [∂a/∂q, ∂a/∂v]] Φ
        let mut dphi = DMatrix::zeros(m, m);
        dphi.rows_mut(0, n).copy_from(&phi.rows(n, n));
        dphi.rows_mut(n, n).copy_from(&(jac * &phi));
        out.rows_mut(m, m * m).copy_from_slice(dphi.as_slice());
        Ok(out)
    }

    fn rk4_base(&self, x0: &DVector<f64>, dt: f64, steps: usize) -> Result<DVector<f64>> {
        rk4(|x| self.base_rhs(x), x0, dt, steps)
    }

    fn rk4_augmented(&self, x0: &DVector<f64>, dt: f64, steps: usize) -> Result<DVector<f64>> {
        rk4(|x| self.augmented_rhs(x), x0, dt, steps)
    }
}

fn rk4<F>(f: F, x0: &DVector<f64>, dt: f64, steps: usize) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut x = x0.clone();
    for _ in 0..steps {
        let k1 = f(&x)?;
        let k2 = f(&(&x + &k1 * (0.5 * dt)))?;
        let k3 = f(&(&x + &k2 * (0.5 * dt)))?;
        let k4 = f(&(&x + &k3 * dt))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    crate::numeric::ensure_finite(&x, "ODE state")?;
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems;
    use approx::assert_relative_eq;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    #[test]
    fn closed_form_example_values() {
        let oracle = FlowOracle::analytic(systems::damped_particle(1.0), settings()).unwrap();
        let s = StateTq::scalar(0.0, 1.0);
        let out = oracle.flow(1.0, &s).unwrap();
        let e = (-1.0f64).exp();
        assert_relative_eq!(out.q[0], 1.0 - e, epsilon = 1e-15);
        assert_relative_eq!(out.v[0], e, epsilon = 1e-15);
        assert_eq!(oracle.flow(0.0, &s).unwrap(), s);
    }

    #[test]
    fn numeric_matches_closed_form() {
        let sys = systems::damped_particle(1.0);
        let a = FlowOracle::analytic(sys.clone(), settings()).unwrap();
        let n = FlowOracle::numeric(sys, settings()).unwrap();
        let s = StateTq::scalar(0.3, -1.4);
        for t in [0.1, 0.7, 2.0, -0.5] {
            let x = a.flow(t, &s).unwrap();
            let y = n.flow(t, &s).unwrap();
            assert!(x.distance(&y) < 1e-10, "t = {t}");
        }
    }

    #[test]
    fn tangent_examples() {
        let oracle = FlowOracle::analytic(systems::damped_particle(1.0), settings()).unwrap();
        let s = StateTq::scalar(0.0, 1.0);
        let dq = oracle.tangent_flow(1.0, &s, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(dq.as_slice(), &[1.0, 0.0]);
        let dv = oracle.tangent_flow(1.0, &s, &DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_relative_eq!(dv[0], 0.632_12, epsilon = 1e-5);
        assert_relative_eq!(dv[1], 0.367_88, epsilon = 1e-5);
        let ds = DVector::from_vec(vec![0.2, -0.7]);
        assert_eq!(oracle.tangent_flow(0.0, &s, &ds).unwrap(), ds);
    }

    #[test]
    fn numeric_tangent_matches_closed_form() {
        let sys = systems::damped_particle(2.0);
        let a = FlowOracle::analytic(sys.clone(), settings()).unwrap();
        let n = FlowOracle::numeric(sys.without_acceleration_jacobian(), settings()).unwrap();
        let s = StateTq::scalar(0.1, 0.9);
        let (_, pa) = a.flow_with_tangent(0.8, &s).unwrap();
        let (_, pn) = n.flow_with_tangent(0.8, &s).unwrap();
        assert_relative_eq!(pa, pn, epsilon = 1e-7);
    }

    #[test]
    fn sampling_composes_flows() {
        let oracle = FlowOracle::analytic(systems::damped_particle(1.0), settings()).unwrap();
        let samples = oracle.sample_trajectory(&StateTq::scalar(0.0, 1.0), 0.5, 2).unwrap();
        assert_eq!(samples.len(), 3);
        assert_relative_eq!(samples[2].q[0], 1.0 - (-1.0f64).exp(), epsilon = 1e-14);
        assert!(oracle.sample_trajectory(&StateTq::scalar(0.0, 1.0), 0.5, 0).is_err());
    }

    #[test]
    fn analytic_requires_closed_form() {
        let err = FlowOracle::analytic(systems::forced_oscillator(1.0, 0.1), settings()).unwrap_err();
        assert!(matches!(err, Error::NoClosedForm { .. }));
    }

    #[test]
    fn step_cap_is_reported() {
        let tight = SolverSettings { ode_tol: 1e-300, ..settings() };
        let oracle = FlowOracle::numeric(systems::forced_pendulum(9.81, 0.1, 0.0), tight).unwrap();
        let err = oracle.flow(1e-3, &StateTq::scalar(0.5, 0.0));
        // either converges to exact agreement or hits the cap; never silently inaccurate
        if let Err(e) = err {
            assert!(matches!(e, Error::NoConvergence { .. }));
        }
    }

    #[test]
    fn oscillator_energy_decays() {
        let sys = systems::forced_oscillator(1.0, 0.1);
        let oracle = FlowOracle::numeric(sys.clone(), settings()).unwrap();
        let s = StateTq::scalar(1.0, 0.0);
        let out = oracle.flow(1.0, &s).unwrap();
        assert!(sys.energy(&out).unwrap() < sys.energy(&s).unwrap());
        // undamped oscillator has cos/sin flow
        let free = FlowOracle::numeric(systems::forced_oscillator(1.0, 0.0), settings()).unwrap();
        let out = free.flow(1.0, &s).unwrap();
        assert_relative_eq!(out.q[0], 1.0f64.cos(), epsilon = 1e-11);
        assert_relative_eq!(out.v[0], -1.0f64.sin(), epsilon = 1e-11);
    }
}
