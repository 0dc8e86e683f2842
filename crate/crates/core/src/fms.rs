//! Forced mechanical systems on ℝⁿ: Lagrangian, force field, fiber derivatives and
//! the Euler–Lagrange acceleration.
//!
//! Derivatives come from user-supplied analytic evaluators when present and from
//! central finite differences otherwise. The force is stored as the force field
//! `f̌(q, v)`, a covector acting on position variations; the horizontal one-form on
//! TQ is recovered by padding with zeros in the velocity slots.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ensure_finite, fd_step, max_norm, solve};
use crate::settings::{RegularityThresholds, SolverSettings};

/// A tangent vector `v_q`, stored as chart coordinates `(q, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTq {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

impl StateTq {
    pub fn new(q: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        Error::check_dim(q.len(), v.len())?;
        if q.is_empty() {
            return Err(Error::InvalidArgument("state dimension must be at least 1".into()));
        }
        ensure_finite(&q, "state position")?;
        ensure_finite(&v, "state velocity")?;
        Ok(Self { q, v })
    }

    pub fn from_slices(q: &[f64], v: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(q), DVector::from_column_slice(v))
    }

    /// One-dimensional convenience constructor.
    pub fn scalar(q: f64, v: f64) -> Self {
        Self { q: DVector::from_element(1, q), v: DVector::from_element(1, v) }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Concatenated `(q, v)` coordinates.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.dim();
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&self.q);
        x.rows_mut(n, n).copy_from(&self.v);
        x
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let n = x.len() / 2;
        Self { q: x.rows(0, n).into_owned(), v: x.rows(n, n).into_owned() }
    }

    /// Max-norm distance over the concatenated coordinates.
    pub fn distance(&self, other: &StateTq) -> f64 {
        (&self.q - &other.q).amax().max((&self.v - &other.v).amax())
    }
}

pub type ScalarField = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type CovectorField = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Closed-form flow of a system, used as the analytic oracle.
pub trait ClosedFormFlow: Send + Sync {
    fn flow(&self, t: f64, s: &StateTq) -> StateTq;
    /// Tangent map of the flow as a 2n×2n matrix acting on `(δq, δv)`.
    fn tangent(&self, t: f64, s: &StateTq) -> DMatrix<f64>;
}

/// A regular forced mechanical system on ℝⁿ. Immutable once built; cheap to clone.
#[derive(Clone)]
pub struct System {
    name: String,
    n: usize,
    params: BTreeMap<String, f64>,
    lagrangian: ScalarField,
    force: CovectorField,
    fiber_derivative: Option<CovectorField>,
    position_gradient: Option<CovectorField>,
    fiber_hessian: Option<MatrixField>,
    mixed_hessian: Option<MatrixField>,
    acceleration_jacobian: Option<MatrixField>,
    closed_form: Option<Arc<dyn ClosedFormFlow>>,
    fd_step_scale: f64,
    regularity: RegularityThresholds,
}

impl fmt::Debug for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("System")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("params", &self.params)
            .field("closed_form", &self.closed_form.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub min_abs_det: f64,
    pub max_condition_number: f64,
    pub ok: bool,
}

impl System {
    pub fn new<L, F>(name: impl Into<String>, n: usize, lagrangian: L, force: F) -> Self
    where
        L: Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        assert!(n >= 1, "system dimension must be positive");
        Self {
            name: name.into(),
            n,
            params: BTreeMap::new(),
            lagrangian: Arc::new(lagrangian),
            force: Arc::new(force),
            fiber_derivative: None,
            position_gradient: None,
            fiber_hessian: None,
            mixed_hessian: None,
            acceleration_jacobian: None,
            closed_form: None,
            fd_step_scale: SolverSettings::default().fd_step_scale,
            regularity: RegularityThresholds::default(),
        }
    }

    /// Unforced system.
    pub fn conservative<L>(name: impl Into<String>, n: usize, lagrangian: L) -> Self
    where
        L: Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        Self::new(name, n, lagrangian, move |_, _| DVector::zeros(n))
    }

    pub fn rename(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    pub fn with_fiber_derivative(
        mut self,
        f: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.fiber_derivative = Some(Arc::new(f));
        self
    }

    pub fn with_position_gradient(
        mut self,
        f: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.position_gradient = Some(Arc::new(f));
        self
    }

    pub fn with_fiber_hessian(
        mut self,
        f: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.fiber_hessian = Some(Arc::new(f));
        self
    }

    /// `M[i][j] = ∂²L/∂v_i∂q_j`.
    pub fn with_mixed_hessian(
        mut self,
        f: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.mixed_hessian = Some(Arc::new(f));
        self
    }

    /// Jacobian `∂a/∂(q, v)` (n×2n) of the Euler–Lagrange acceleration.
    pub fn with_acceleration_jacobian(
        mut self,
        f: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.acceleration_jacobian = Some(Arc::new(f));
        self
    }

    pub fn with_closed_form(mut self, flow: impl ClosedFormFlow + 'static) -> Self {
        self.closed_form = Some(Arc::new(flow));
        self
    }

    pub fn with_fd_step_scale(mut self, scale: f64) -> Self {
        self.fd_step_scale = scale;
        self
    }

    pub fn with_regularity(mut self, thresholds: RegularityThresholds) -> Self {
        self.regularity = thresholds;
        self
    }

    /// Drops every analytic derivative so all of them fall back to finite differences.
    pub fn without_analytic_derivatives(mut self) -> Self {
        self.fiber_derivative = None;
        self.position_gradient = None;
        self.fiber_hessian = None;
        self.mixed_hessian = None;
        self.acceleration_jacobian = None;
        self
    }

    /// Drops only the analytic acceleration Jacobian.
    pub fn without_acceleration_jacobian(mut self) -> Self {
        self.acceleration_jacobian = None;
        self
    }

    pub fn has_acceleration_jacobian(&self) -> bool {
        self.acceleration_jacobian.is_some()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    pub fn fd_step_scale(&self) -> f64 {
        self.fd_step_scale
    }

    pub fn regularity_thresholds(&self) -> RegularityThresholds {
        self.regularity
    }

    pub fn closed_form(&self) -> Option<&Arc<dyn ClosedFormFlow>> {
        self.closed_form.as_ref()
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        self.fiber_derivative.is_some()
            && self.position_gradient.is_some()
            && self.fiber_hessian.is_some()
            && self.mixed_hessian.is_some()
    }

    fn check(&self, s: &StateTq) -> Result<()> {
        Error::check_dim(self.n, s.q.len())?;
        Error::check_dim(self.n, s.v.len())
    }

    fn second_step(&self, size: f64) -> f64 {
        // large enough that roundoff stays near 1e-10 relative; one Richardson
        // extrapolation removes the leading truncation term
        fd_step(self.fd_step_scale.sqrt(), size)
    }

    pub fn eval_lagrangian(&self, s: &StateTq) -> Result<f64> {
        self.check(s)?;
        let value = (self.lagrangian)(&s.q, &s.v);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite { what: "Lagrangian" })
        }
    }

    /// The force field `f̌(q, v)` as a covector acting on `δq`.
    pub fn eval_force(&self, s: &StateTq) -> Result<DVector<f64>> {
        self.check(s)?;
        let f = (self.force)(&s.q, &s.v);
        Error::check_dim(self.n, f.len())?;
        ensure_finite(&f, "force")?;
        Ok(f)
    }

    /// The horizontal one-form on TQ induced by the force field, as a length-2n covector
    /// acting on `(δq, δv)`.
    pub fn horizontal_force(&self, s: &StateTq) -> Result<DVector<f64>> {
        let f = self.eval_force(s)?;
        let mut out = DVector::zeros(2 * self.n);
        out.rows_mut(0, self.n).copy_from(&f);
        Ok(out)
    }

    /// Legendre transform `𝔽L(q, v)`.
    pub fn fiber_derivative(&self, s: &StateTq) -> Result<DVector<f64>> {
        self.check(s)?;
        if let Some(df) = &self.fiber_derivative {
            return Ok(df(&s.q, &s.v));
        }
        let step = fd_step(self.fd_step_scale, max_norm(&s.v));
        Ok(self.central_gradient(&s.q, &s.v, step, true))
    }

    /// `∂L/∂q`.
    pub fn position_gradient(&self, s: &StateTq) -> Result<DVector<f64>> {
        self.check(s)?;
        if let Some(dq) = &self.position_gradient {
            return Ok(dq(&s.q, &s.v));
        }
        let step = fd_step(self.fd_step_scale, max_norm(&s.q));
        Ok(self.central_gradient(&s.q, &s.v, step, false))
    }

    /// Full differential of `L` as a length-2n covector.
    pub fn lagrangian_differential(&self, s: &StateTq) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(2 * self.n);
        out.rows_mut(0, self.n).copy_from(&self.position_gradient(s)?);
        out.rows_mut(self.n, self.n).copy_from(&self.fiber_derivative(s)?);
        Ok(out)
    }

    fn central_gradient(&self, q: &DVector<f64>, v: &DVector<f64>, step: f64, in_v: bool) -> DVector<f64> {
        let mut grad = DVector::zeros(self.n);
        let (mut qp, mut vp) = (q.clone(), v.clone());
        for i in 0..self.n {
            let target = if in_v { &mut vp } else { &mut qp };
            let base = target[i];
            target[i] = base + step;
            let up = (self.lagrangian)(&qp, &vp);
            let target = if in_v { &mut vp } else { &mut qp };
            target[i] = base - step;
            let down = (self.lagrangian)(&qp, &vp);
            let target = if in_v { &mut vp } else { &mut qp };
            target[i] = base;
            grad[i] = (up - down) / (2.0 * step);
        }
        grad
    }

    /// Matrix of `∂²L/∂v∂v`, symmetrized.
    pub fn fiber_hessian(&self, s: &StateTq) -> Result<DMatrix<f64>> {
        self.check(s)?;
        let raw = if let Some(h) = &self.fiber_hessian {
            h(&s.q, &s.v)
        } else if let Some(df) = &self.fiber_derivative {
            let step = fd_step(self.fd_step_scale, max_norm(&s.v));
            let mut m = DMatrix::zeros(self.n, self.n);
            let mut vp = s.v.clone();
            for j in 0..self.n {
                vp[j] = s.v[j] + step;
                let up = df(&s.q, &vp);
                vp[j] = s.v[j] - step;
                let down = df(&s.q, &vp);
                vp[j] = s.v[j];
                m.set_column(j, &((up - down) / (2.0 * step)));
            }
            m
        } else {
            let step = self.second_step(max_norm(&s.v));
            self.second_differences(s, step, true, true)
        };
        Ok(symmetrize(raw))
    }

    /// Matrix `M[i][j] = ∂²L/∂v_i∂q_j`.
    pub fn mixed_hessian(&self, s: &StateTq) -> Result<DMatrix<f64>> {
        self.check(s)?;
        if let Some(h) = &self.mixed_hessian {
            return Ok(h(&s.q, &s.v));
        }
        if let Some(df) = &self.fiber_derivative {
            let step = fd_step(self.fd_step_scale, max_norm(&s.q));
            let mut m = DMatrix::zeros(self.n, self.n);
            let mut qp = s.q.clone();
            for j in 0..self.n {
                qp[j] = s.q[j] + step;
                let up = df(&qp, &s.v);
                qp[j] = s.q[j] - step;
                let down = df(&qp, &s.v);
                qp[j] = s.q[j];
                m.set_column(j, &((up - down) / (2.0 * step)));
            }
            return Ok(m);
        }
        let step = self.second_step(max_norm(&s.q).max(max_norm(&s.v)));
        Ok(self.second_differences(s, step, true, false))
    }

    /// Richardson-extrapolated second differences of L; rows index v (when `rows_v`),
    /// columns index v or q.
    fn second_differences(&self, s: &StateTq, step: f64, rows_v: bool, cols_v: bool) -> DMatrix<f64> {
        let coarse = self.plain_second_differences(s, step, rows_v, cols_v);
        let fine = self.plain_second_differences(s, 0.5 * step, rows_v, cols_v);
        (fine * 4.0 - coarse) / 3.0
    }

    fn plain_second_differences(&self, s: &StateTq, step: f64, rows_v: bool, cols_v: bool) -> DMatrix<f64> {
        let n = self.n;
        let l = |dq: &DVector<f64>, dv: &DVector<f64>| (self.lagrangian)(&(&s.q + dq), &(&s.v + dv));
        let unit = |i: usize, scale: f64| {
            let mut e = DVector::zeros(n);
            e[i] = scale;
            e
        };
        let zero = DVector::zeros(n);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let split = |a: f64, b: f64| {
                    let mut dq = zero.clone();
                    let mut dv = zero.clone();
                    if rows_v { dv += unit(i, a) } else { dq += unit(i, a) }
                    if cols_v { dv += unit(j, b) } else { dq += unit(j, b) }
                    (dq, dv)
                };
                let (a, b) = split(step, step);
                let pp = l(&a, &b);
                let (a, b) = split(step, -step);
                let pm = l(&a, &b);
                let (a, b) = split(-step, step);
                let mp = l(&a, &b);
                let (a, b) = split(-step, -step);
                let mm = l(&a, &b);
                m[(i, j)] = (pp - pm - mp + mm) / (4.0 * step * step);
            }
        }
        m
    }

    pub fn check_regularity(&self, samples: &[StateTq]) -> Result<RegularityReport> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("regularity check needs at least one sample".into()));
        }
        let mut min_abs_det = f64::INFINITY;
        let mut max_condition_number: f64 = 0.0;
        for s in samples {
            let m = self.fiber_hessian(s)?;
            let (det, cond) = det_and_condition(&m);
            min_abs_det = min_abs_det.min(det.abs());
            max_condition_number = max_condition_number.max(cond);
        }
        let ok = min_abs_det > self.regularity.min_abs_det
            && max_condition_number < self.regularity.max_condition;
        Ok(RegularityReport { min_abs_det, max_condition_number, ok })
    }

    /// Solves `𝔽²L · a = f̌ + ∂L/∂q − (∂²L/∂v∂q) v` for the acceleration.
    pub fn el_acceleration(&self, s: &StateTq) -> Result<DVector<f64>> {
        let mass = self.fiber_hessian(s)?;
        let (det, cond) = det_and_condition(&mass);
        if !(det.abs() > self.regularity.min_abs_det && cond < self.regularity.max_condition) {
            return Err(Error::SingularMassMatrix { abs_det: det.abs(), condition: cond });
        }
        let rhs = self.eval_force(s)? + self.position_gradient(s)? - self.mixed_hessian(s)? * &s.v;
        let a = solve(mass, &rhs).map_err(|_| Error::SingularMassMatrix { abs_det: det.abs(), condition: cond })?;
        ensure_finite(&a, "acceleration")?;
        Ok(a)
    }

    /// `∂a/∂(q, v)` as an n×2n matrix.
    pub fn acceleration_jacobian(&self, s: &StateTq) -> Result<DMatrix<f64>> {
        self.check(s)?;
        if let Some(j) = &self.acceleration_jacobian {
            return Ok(j(&s.q, &s.v));
        }
        let x = s.to_vector();
        crate::numeric::fd_jacobian(
            |p| self.el_acceleration(&StateTq::from_vector(p)),
            &x,
            self.n,
            self.fd_step_scale,
        )
    }

    /// `E_L = 𝔽L(v)(v) − L(v)`.
    pub fn energy(&self, s: &StateTq) -> Result<f64> {
        Ok(self.fiber_derivative(s)?.dot(&s.v) - self.eval_lagrangian(s)?)
    }

    /// Inverse Legendre transform: the velocity at `q` whose momentum is `p`.
    pub fn inverse_legendre(&self, q: &DVector<f64>, p: &DVector<f64>, guess: &DVector<f64>, settings: &SolverSettings) -> Result<DVector<f64>> {
        Error::check_dim(self.n, p.len())?;
        let out = crate::numeric::newton(
            |v| Ok(self.fiber_derivative(&StateTq { q: q.clone(), v: v.clone() })? - p),
            |v, _| self.fiber_hessian(&StateTq { q: q.clone(), v: v.clone() }),
            guess.clone(),
            crate::numeric::NewtonOptions::new(settings.newton_tol, settings.newton_max_iter),
        )?;
        Ok(out.x)
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Determinant and 2-norm condition number; singular matrices report an infinite condition.
pub fn det_and_condition(m: &DMatrix<f64>) -> (f64, f64) {
    let det = m.determinant();
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    (det, cond)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems;
    use approx::assert_relative_eq;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn state_validation() {
        assert!(StateTq::from_slices(&[1.0], &[1.0, 2.0]).is_err());
        assert!(StateTq::from_slices(&[], &[]).is_err());
        assert!(StateTq::from_slices(&[f64::NAN], &[0.0]).is_err());
        let s = StateTq::from_slices(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(StateTq::from_vector(&s.to_vector()), s);
    }

    #[test]
    fn damped_particle_pointwise_values() {
        let sys = systems::damped_particle(1.0);
        assert_eq!(sys.eval_lagrangian(&StateTq::scalar(3.0, 2.0)).unwrap(), 2.0);
        assert_eq!(sys.eval_lagrangian(&StateTq::scalar(3.0, 0.0)).unwrap(), 0.0);
        assert_eq!(sys.eval_force(&StateTq::scalar(0.0, 2.0)).unwrap()[0], -2.0);
        assert_eq!(sys.eval_force(&StateTq::scalar(0.0, 0.0)).unwrap()[0], 0.0);
        assert_eq!(sys.fiber_derivative(&StateTq::scalar(0.0, 3.0)).unwrap()[0], 3.0);
        assert_eq!(sys.energy(&StateTq::scalar(0.0, 2.0)).unwrap(), 2.0);
        let half = systems::damped_particle(0.5);
        assert_eq!(half.eval_force(&StateTq::scalar(0.0, 4.0)).unwrap()[0], -2.0);
    }

    #[test]
    fn oscillator_values() {
        let sys = systems::forced_oscillator(1.0, 0.1);
        assert_eq!(sys.eval_lagrangian(&StateTq::scalar(1.0, 1.0)).unwrap(), 0.0);
        assert_eq!(sys.energy(&StateTq::scalar(1.0, 1.0)).unwrap(), 1.0);
        assert_relative_eq!(sys.el_acceleration(&StateTq::scalar(1.0, 0.0)).unwrap()[0], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let sys = systems::damped_particle(1.0);
        let s = StateTq::from_slices(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!(matches!(sys.eval_lagrangian(&s), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(sys.energy(&s), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn fd_fiber_derivative_with_linear_term() {
        // L = |v|²/2 + q·v
        let sys = System::conservative("qv", 2, |q, v| 0.5 * v.norm_squared() + q.dot(v));
        let s = StateTq::from_slices(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        let p = sys.fiber_derivative(&s).unwrap();
        assert_relative_eq!(p[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(p[1], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn fd_fiber_hessian_of_quadratic_form() {
        let sys = System::conservative("m", 2, |_, v| v[0] * v[0] + 1.5 * v[1] * v[1]);
        let s = StateTq::from_slices(&[0.3, -0.2], &[0.7, 1.1]).unwrap();
        let m = sys.fiber_hessian(&s).unwrap();
        assert_relative_eq!(m[(0, 0)], 2.0, epsilon = 1e-7);
        assert_relative_eq!(m[(1, 1)], 3.0, epsilon = 1e-7);
        assert_relative_eq!(m[(0, 1)], 0.0, epsilon = 1e-7);
        assert_eq!(m[(0, 1)], m[(1, 0)]);
    }

    #[test]
    fn velocity_free_lagrangian_is_singular() {
        let sys = System::conservative("qv", 1, |q, v| q[0] * v[0]);
        let s = StateTq::scalar(0.4, 0.2);
        let m = sys.fiber_hessian(&s).unwrap();
        assert!(m[(0, 0)].abs() < 1e-6);
        let report = sys.check_regularity(std::slice::from_ref(&s)).unwrap();
        assert!(!report.ok);
        assert!(matches!(sys.el_acceleration(&s), Err(Error::SingularMassMatrix { .. })));
    }

    #[test]
    fn quartic_kinetic_term_degenerates_at_rest() {
        let sys = System::conservative("quartic", 1, |_, v| v[0].powi(4) / 4.0)
            .with_fiber_derivative(|_, v| v.map(|x| x.powi(3)))
            .with_fiber_hessian(|_, v| DMatrix::from_element(1, 1, 3.0 * v[0] * v[0]));
        let report = sys.check_regularity(&[StateTq::scalar(0.0, 1.0), StateTq::scalar(0.0, 0.0)]).unwrap();
        assert!(!report.ok);
        assert_eq!(report.min_abs_det, 0.0);
    }

    #[test]
    fn damped_particle_is_regular() {
        let sys = systems::damped_particle(1.0);
        let samples: Vec<_> = (0..5).map(|k| StateTq::scalar(k as f64, -1.0 + 0.5 * k as f64)).collect();
        let r = sys.check_regularity(&samples).unwrap();
        assert!(r.ok);
        assert_eq!(r.min_abs_det, 1.0);
        assert_eq!(r.max_condition_number, 1.0);
        assert!(sys.check_regularity(&[]).is_err());
    }

    #[test]
    fn acceleration_examples() {
        let sys = systems::damped_particle(1.0);
        assert_relative_eq!(sys.el_acceleration(&StateTq::scalar(0.0, 2.0)).unwrap()[0], -2.0, epsilon = 1e-15);
        let free = systems::free_particle(2);
        let s = StateTq::from_slices(&[1.0, 2.0], &[3.0, -1.0]).unwrap();
        assert_eq!(free.el_acceleration(&s).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn fd_mode_acceleration_uses_all_terms() {
        // L = ½ v² + q v - q²  gives  a = ∂L/∂q - (∂²L/∂v∂q) v = (v - 2q) - v = -2q
        let sys = System::conservative("mixed", 1, |q, v| 0.5 * v[0] * v[0] + q[0] * v[0] - q[0] * q[0]);
        let a = sys.el_acceleration(&StateTq::scalar(0.7, 1.3)).unwrap();
        assert_relative_eq!(a[0], -1.4, epsilon = 1e-7);
        let _ = v1(0.0);
    }

    #[test]
    fn inverse_legendre_round_trip() {
        let sys = systems::linear_system(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
        );
        let s = StateTq::from_slices(&[0.1, 0.2], &[0.5, -0.4]).unwrap();
        let p = sys.fiber_derivative(&s).unwrap();
        let v = sys.inverse_legendre(&s.q, &p, &DVector::zeros(2), &SolverSettings::default()).unwrap();
        assert_relative_eq!(v, s.v, epsilon = 1e-12);
    }
}
