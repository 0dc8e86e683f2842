//! Discretizations of TQ and discrete data on TQ.
//!
//! A discretization attaches to every step size `h` and tangent vector `s` a short
//! curve `t ↦ ψ(h, t, s)` through `s.q` with initial velocity `s.v`. Its endpoints at
//! the times `α⁻(h)` and `α⁺(h)` are the boundary maps. Discrete data on TQ is a
//! discrete Lagrangian `L_cp(h, s)` together with a discrete force `f_cp(h, s)`, a
//! covector on TQ of length 2n acting on `(δq, δv)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowOracle;
use crate::fms::{StateTq, System};
use crate::numeric::{fd_step, max_norm};
use crate::quadrature::{integrate, GaussRule};
use crate::settings::SolverSettings;
use crate::systems;

fn default_fd_scale() -> f64 {
    SolverSettings::default().fd_step_scale
}

/// A smooth family of curves `ψ(h, t, s)` in Q.
pub trait CurveFamily: Send + Sync {
    fn dim(&self) -> usize;

    fn position(&self, h: f64, t: f64, s: &StateTq) -> Result<DVector<f64>>;

    /// `∂ψ/∂t`.
    fn velocity(&self, h: f64, t: f64, s: &StateTq) -> Result<DVector<f64>> {
        let step = fd_step(default_fd_scale(), t.abs());
        Ok((self.position(h, t + step, s)? - self.position(h, t - step, s)?) / (2.0 * step))
    }

    /// `∂ψ/∂(q, v)` as an n×2n matrix.
    fn jacobian(&self, h: f64, t: f64, s: &StateTq) -> Result<DMatrix<f64>> {
        crate::numeric::fd_jacobian(
            |x| self.position(h, t, &StateTq::from_vector(x)),
            &s.to_vector(),
            self.dim(),
            default_fd_scale(),
        )
    }

    /// `∂(∂ψ/∂t)/∂(q, v)` as an n×2n matrix.
    fn velocity_jacobian(&self, h: f64, t: f64, s: &StateTq) -> Result<DMatrix<f64>> {
        crate::numeric::fd_jacobian(
            |x| self.velocity(h, t, &StateTq::from_vector(x)),
            &s.to_vector(),
            self.dim(),
            default_fd_scale(),
        )
    }
}

/// `ψ(h, t, (q, v)) = q + t v`.
#[derive(Debug, Clone)]
pub struct LinearCurve {
    n: usize,
}

impl CurveFamily for LinearCurve {
    fn dim(&self) -> usize {
        self.n
    }

    fn position(&self, _h: f64, t: f64, s: &StateTq) -> Result<DVector<f64>> {
        Ok(&s.q + &s.v * t)
    }

    fn velocity(&self, _h: f64, _t: f64, s: &StateTq) -> Result<DVector<f64>> {
        Ok(s.v.clone())
    }

    fn jacobian(&self, _h: f64, t: f64, _s: &StateTq) -> Result<DMatrix<f64>> {
        Ok(block_row(self.n, 1.0, t))
    }

    fn velocity_jacobian(&self, _h: f64, _t: f64, _s: &StateTq) -> Result<DMatrix<f64>> {
        Ok(block_row(self.n, 0.0, 1.0))
    }
}

/// `[a I, b I]` as an n×2n matrix.
fn block_row(n: usize, a: f64, b: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, 2 * n);
    for i in 0..n {
        m[(i, i)] = a;
        m[(i, n + i)] = b;
    }
    m
}

/// `ψ(h, t, s) = position of flow(t, s)`.
#[derive(Debug, Clone)]
pub struct ExactCurve {
    oracle: FlowOracle,
}

impl CurveFamily for ExactCurve {
    fn dim(&self) -> usize {
        self.oracle.system().dim()
    }

    fn position(&self, _h: f64, t: f64, s: &StateTq) -> Result<DVector<f64>> {
        Ok(self.oracle.flow(t, s)?.q)
    }

    fn velocity(&self, _h: f64, t: f64, s: &StateTq) -> Result<DVector<f64>> {
        Ok(self.oracle.flow(t, s)?.v)
    }

    fn jacobian(&self, _h: f64, t: f64, s: &StateTq) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let (_, phi) = self.oracle.flow_with_tangent(t, s)?;
        Ok(phi.rows(0, n).into_owned())
    }

    fn velocity_jacobian(&self, _h: f64, t: f64, s: &StateTq) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let (_, phi) = self.oracle.flow_with_tangent(t, s)?;
        Ok(phi.rows(n, n).into_owned())
    }
}

/// `Σ_{j=1..r} (-a)^{j-1} t^j / j!`, which equals `S_r(-a t) / a` for `a ≠ 0` and is
/// continuous at `a = 0`.
pub fn truncated_decay(r: usize, a: f64, t: f64) -> f64 {
    let mut term = t;
    let mut sum = t;
    for j in 2..=r {
        term *= -a * t / j as f64;
        sum += term;
    }
    sum
}

/// `d/dt` of [`truncated_decay`]: `Σ_{j=0..r-1} (-a t)^j / j!`.
fn truncated_decay_rate(r: usize, a: f64, t: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..r {
        term *= -a * t / j as f64;
        sum += term;
    }
    sum
}

/// Order-r Taylor truncation of the damped-particle flow curve.
#[derive(Debug, Clone)]
pub struct TruncatedFrictionCurve {
    n: usize,
    alpha: f64,
    r: usize,
}

impl CurveFamily for TruncatedFrictionCurve {
    fn dim(&self) -> usize {
        self.n
    }

    fn position(&self, _h: f64, t: f64, s: &StateTq) -> Result<DVector<f64>> {
        Ok(&s.q + &s.v * truncated_decay(self.r, self.alpha, t))
    }

    fn velocity(&self, _h: f64, t: f64, s: &StateTq) -> Result<DVector<f64>> {
        Ok(&s.v * truncated_decay_rate(self.r, self.alpha, t))
    }

    fn jacobian(&self, _h: f64, t: f64, _s: &StateTq) -> Result<DMatrix<f64>> {
        Ok(block_row(self.n, 1.0, truncated_decay(self.r, self.alpha, t)))
    }

    fn velocity_jacobian(&self, _h: f64, t: f64, _s: &StateTq) -> Result<DMatrix<f64>> {
        Ok(block_row(self.n, 0.0, truncated_decay_rate(self.r, self.alpha, t)))
    }
}

pub type TimeMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The pair `(α⁻, α⁺)` of endpoint times.
#[derive(Clone)]
pub struct AlphaPair {
    name: String,
    minus: TimeMap,
    plus: TimeMap,
}

impl fmt::Debug for AlphaPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AlphaPair({})", self.name)
    }
}

impl AlphaPair {
    /// `α⁻ = 0`, `α⁺ = h`.
    pub fn one_sided() -> Self {
        Self::custom("one_sided", |_| 0.0, |h| h)
    }

    /// `α∓ = ∓h/2`.
    pub fn symmetric() -> Self {
        Self::custom("symmetric", |h| -0.5 * h, |h| 0.5 * h)
    }

    pub fn custom(
        name: impl Into<String>,
        minus: impl Fn(f64) -> f64 + Send + Sync + 'static,
        plus: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), minus: Arc::new(minus), plus: Arc::new(plus) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn minus(&self, h: f64) -> f64 {
        (self.minus)(h)
    }

    pub fn plus(&self, h: f64) -> f64 {
        (self.plus)(h)
    }

    pub fn is_one_sided(&self) -> bool {
        self.name == "one_sided"
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscretizationKind {
    Linear,
    Exact,
    TruncatedExact { r: usize },
    Custom,
}

/// A discretization `(ψ, α⁺, α⁻)` of TQ.
#[derive(Clone)]
pub struct DiscretizationTq {
    curve: Arc<dyn CurveFamily>,
    alpha: AlphaPair,
    kind: DiscretizationKind,
    /// Admissible step sizes satisfy `|h| < bound`.
    bound: Option<f64>,
    oracle: Option<FlowOracle>,
}

impl fmt::Debug for DiscretizationTq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscretizationTq")
            .field("kind", &self.kind)
            .field("alpha", &self.alpha)
            .field("bound", &self.bound)
            .finish()
    }
}

impl DiscretizationTq {
    pub fn custom(curve: impl CurveFamily + 'static, alpha: AlphaPair) -> Self {
        Self { curve: Arc::new(curve), alpha, kind: DiscretizationKind::Custom, bound: None, oracle: None }
    }

    pub fn linear(n: usize) -> Self {
        Self::linear_with(n, AlphaPair::one_sided())
    }

    pub fn linear_with(n: usize, alpha: AlphaPair) -> Self {
        Self {
            curve: Arc::new(LinearCurve { n }),
            alpha,
            kind: DiscretizationKind::Linear,
            bound: None,
            oracle: None,
        }
    }

    pub fn exact(oracle: FlowOracle, alpha: AlphaPair) -> Self {
        Self {
            curve: Arc::new(ExactCurve { oracle: oracle.clone() }),
            alpha,
            kind: DiscretizationKind::Exact,
            bound: None,
            oracle: Some(oracle),
        }
    }

    pub fn truncated_friction(n: usize, alpha_damping: f64, r: usize) -> Result<Self> {
        if r < 1 {
            return Err(Error::InvalidArgument("truncation order must be at least 1".into()));
        }
        Ok(Self {
            curve: Arc::new(TruncatedFrictionCurve { n, alpha: alpha_damping, r }),
            alpha: AlphaPair::one_sided(),
            kind: DiscretizationKind::TruncatedExact { r },
            bound: None,
            oracle: None,
        })
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    pub fn with_alpha(mut self, alpha: AlphaPair) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn dim(&self) -> usize {
        self.curve.dim()
    }

    pub fn kind(&self) -> &DiscretizationKind {
        &self.kind
    }

    pub fn alpha(&self) -> &AlphaPair {
        &self.alpha
    }

    /// The flow oracle behind an exact discretization.
    pub fn oracle(&self) -> Option<&FlowOracle> {
        self.oracle.as_ref()
    }

    pub fn check_h(&self, h: f64) -> Result<()> {
        if !h.is_finite() {
            return Err(Error::NonFinite { what: "step size" });
        }
        match self.bound {
            Some(a) if h.abs() >= a => Err(Error::StepOutOfDomain { h }),
            _ => Ok(()),
        }
    }

    fn check_state(&self, s: &StateTq) -> Result<()> {
        Error::check_dim(self.dim(), s.dim())
    }

    pub fn psi(&self, h: f64, t: f64, s: &StateTq) -> Result<DVector<f64>> {
        self.check_h(h)?;
        self.check_state(s)?;
        self.curve.position(h, t, s)
    }

    pub fn psi_velocity(&self, h: f64, t: f64, s: &StateTq) -> Result<DVector<f64>> {
        self.check_h(h)?;
        self.check_state(s)?;
        self.curve.velocity(h, t, s)
    }

    pub fn psi_jacobian(&self, h: f64, t: f64, s: &StateTq) -> Result<DMatrix<f64>> {
        self.check_h(h)?;
        self.check_state(s)?;
        self.curve.jacobian(h, t, s)
    }

    pub fn psi_velocity_jacobian(&self, h: f64, t: f64, s: &StateTq) -> Result<DMatrix<f64>> {
        self.check_h(h)?;
        self.check_state(s)?;
        self.curve.velocity_jacobian(h, t, s)
    }

    pub fn boundary_minus(&self, h: f64, s: &StateTq) -> Result<DVector<f64>> {
        self.psi(h, self.alpha.minus(h), s)
    }

    pub fn boundary_plus(&self, h: f64, s: &StateTq) -> Result<DVector<f64>> {
        self.psi(h, self.alpha.plus(h), s)
    }

    pub fn boundary_pm(&self, h: f64, s: &StateTq) -> Result<(DVector<f64>, DVector<f64>)> {
        Ok((self.boundary_minus(h, s)?, self.boundary_plus(h, s)?))
    }

    /// Jacobians `(T∂⁻_h, T∂⁺_h)`, each n×2n.
    pub fn boundary_jacobians(&self, h: f64, s: &StateTq) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((
            self.psi_jacobian(h, self.alpha.minus(h), s)?,
            self.psi_jacobian(h, self.alpha.plus(h), s)?,
        ))
    }
}

/// Values of discrete TQ data at one point: `L_cp`, `dL_cp` and `f_cp`.
#[derive(Debug, Clone, PartialEq)]
pub struct TqValues {
    pub lagrangian: f64,
    pub gradient: DVector<f64>,
    pub force: DVector<f64>,
}

impl TqValues {
    /// `μ = dL_cp + f_cp`.
    pub fn mu(&self) -> DVector<f64> {
        &self.gradient + &self.force
    }
}

/// A discrete Lagrangian and discrete force on TQ.
pub trait DiscreteDataTq: Send + Sync {
    fn dim(&self) -> usize;

    fn name(&self) -> &str;

    fn lagrangian(&self, h: f64, s: &StateTq) -> Result<f64>;

    /// `f_cp(h, s)` as a length-2n covector acting on `(δq, δv)`.
    fn force(&self, h: f64, s: &StateTq) -> Result<DVector<f64>>;

    /// `d L_cp(h, ·)` at `s`, a length-2n covector.
    fn lagrangian_gradient(&self, h: f64, s: &StateTq) -> Result<DVector<f64>> {
        crate::numeric::fd_gradient(
            |x| self.lagrangian(h, &StateTq::from_vector(x)),
            &s.to_vector(),
            default_fd_scale(),
        )
    }

    fn evaluate(&self, h: f64, s: &StateTq) -> Result<TqValues> {
        Ok(TqValues {
            lagrangian: self.lagrangian(h, s)?,
            gradient: self.lagrangian_gradient(h, s)?,
            force: self.force(h, s)?,
        })
    }

    fn declared_order(&self) -> Option<usize> {
        None
    }

    /// The continuous system the data discretizes, when known.
    fn system(&self) -> Option<&System> {
        None
    }
}

/// Exact data: `L_cp` and `f_cp` are integrals along the continuous flow over
/// `[α⁻(h), α⁺(h)]`.
#[derive(Debug, Clone)]
pub struct ExactDataTq {
    oracle: FlowOracle,
    alpha: AlphaPair,
    quad_tol: f64,
}

impl ExactDataTq {
    pub fn oracle(&self) -> &FlowOracle {
        &self.oracle
    }

    pub fn alpha(&self) -> &AlphaPair {
        &self.alpha
    }
}

pub fn exact_discrete_data_tq(oracle: FlowOracle, alpha: AlphaPair, settings: &SolverSettings) -> ExactDataTq {
    ExactDataTq { oracle, alpha, quad_tol: settings.quad_tol }
}

impl DiscreteDataTq for ExactDataTq {
    fn dim(&self) -> usize {
        self.oracle.system().dim()
    }

    fn name(&self) -> &str {
        "exact"
    }

    fn lagrangian(&self, h: f64, s: &StateTq) -> Result<f64> {
        let sys = self.oracle.system();
        let v = integrate(
            |t| Ok(DVector::from_element(1, sys.eval_lagrangian(&self.oracle.flow(t, s)?)?)),
            self.alpha.minus(h),
            self.alpha.plus(h),
            1,
            self.quad_tol,
        )?;
        Ok(v[0])
    }

    fn force(&self, h: f64, s: &StateTq) -> Result<DVector<f64>> {
        Ok(self.evaluate(h, s)?.force)
    }

    fn lagrangian_gradient(&self, h: f64, s: &StateTq) -> Result<DVector<f64>> {
        Ok(self.evaluate(h, s)?.gradient)
    }

    /// One vector quadrature of `(L, dL·Φ_t, f̌·(Φ_t)_q)` along the flow.
    fn evaluate(&self, h: f64, s: &StateTq) -> Result<TqValues> {
        Error::check_dim(self.dim(), s.dim())?;
        let sys = self.oracle.system();
        let n = sys.dim();
        let m = 2 * n;
        let total = integrate(
            |t| {
                let (x, phi) = self.oracle.flow_with_tangent(t, s)?;
                let mut out = DVector::zeros(1 + 2 * m);
                out[0] = sys.eval_lagrangian(&x)?;
                let dl = sys.lagrangian_differential(&x)?;
                out.rows_mut(1, m).copy_from(&(phi.transpose() * dl));
                let f = sys.eval_force(&x)?;
                out.rows_mut(1 + m, m).copy_from(&(phi.rows(0, n).transpose() * f));
                Ok(out)
            },
            self.alpha.minus(h),
            self.alpha.plus(h),
            1 + 2 * m,
            self.quad_tol,
        )?;
        Ok(TqValues {
            lagrangian: total[0],
            gradient: total.rows(1, m).into_owned(),
            force: total.rows(1 + m, m).into_owned(),
        })
    }

    fn system(&self) -> Option<&System> {
        Some(self.oracle.system())
    }
}

/// Closed-form data of the order-r truncated exact discretization of the damped particle.
#[derive(Debug, Clone)]
pub struct TruncatedFrictionData {
    sys: System,
    alpha: f64,
    r: usize,
}

impl DiscreteDataTq for TruncatedFrictionData {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn name(&self) -> &str {
        "truncated_exact"
    }

    fn lagrangian(&self, h: f64, s: &StateTq) -> Result<f64> {
        Error::check_dim(self.dim(), s.dim())?;
        // (|v|² / (4α)) S_r(-2αh)
        Ok(0.5 * s.v.norm_squared() * truncated_decay(self.r, 2.0 * self.alpha, h))
    }

    fn force(&self, h: f64, s: &StateTq) -> Result<DVector<f64>> {
        Error::check_dim(self.dim(), s.dim())?;
        let n = self.dim();
        let g1 = truncated_decay(self.r, self.alpha, h);
        let g2 = truncated_decay(self.r, 2.0 * self.alpha, h);
        let mut f = DVector::zeros(2 * n);
        f.rows_mut(0, n).copy_from(&(&s.v * (-self.alpha * g1)));
        f.rows_mut(n, n).copy_from(&(&s.v * -(g1 - g2)));
        Ok(f)
    }

    fn lagrangian_gradient(&self, h: f64, s: &StateTq) -> Result<DVector<f64>> {
        Error::check_dim(self.dim(), s.dim())?;
        let n = self.dim();
        let mut g = DVector::zeros(2 * n);
        g.rows_mut(n, n).copy_from(&(&s.v * truncated_decay(self.r, 2.0 * self.alpha, h)));
        Ok(g)
    }

    fn declared_order(&self) -> Option<usize> {
        Some(self.r)
    }

    fn system(&self) -> Option<&System> {
        Some(&self.sys)
    }
}

/// The order-r truncated exact discretization of the one-dimensional damped particle
/// together with its discrete data.
pub fn truncated_exact_friction(alpha: f64, r: usize) -> Result<(DiscretizationTq, TruncatedFrictionData)> {
    truncated_exact_friction_n(1, alpha, r)
}

pub fn truncated_exact_friction_n(
    n: usize,
    alpha: f64,
    r: usize,
) -> Result<(DiscretizationTq, TruncatedFrictionData)> {
    let d = DiscretizationTq::truncated_friction(n, alpha, r)?;
    let data = TruncatedFrictionData { sys: systems::damped_particle_n(n, alpha), alpha, r };
    Ok((d, data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadRule {
    /// Left endpoint `α⁻(h)`.
    Rectangle,
    Trapezoid,
    Midpoint,
    Gauss(usize),
}

impl QuadRule {
    fn nodes(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let len = b - a;
        match *self {
            QuadRule::Rectangle => vec![(a, len)],
            QuadRule::Trapezoid => vec![(a, 0.5 * len), (b, 0.5 * len)],
            QuadRule::Midpoint => vec![(0.5 * (a + b), len)],
            QuadRule::Gauss(k) => GaussRule::new(k.max(1)).mapped(a, b).collect(),
        }
    }

    /// Polynomial degree integrated exactly, plus one.
    pub fn order(&self) -> usize {
        match *self {
            QuadRule::Rectangle => 1,
            QuadRule::Trapezoid | QuadRule::Midpoint => 2,
            QuadRule::Gauss(k) => 2 * k.max(1),
        }
    }
}

/// Data obtained by applying a fixed quadrature rule to `L` and `f̌` along the curves of a
/// discretization.
#[derive(Debug, Clone)]
pub struct QuadratureDataTq {
    sys: System,
    disc: DiscretizationTq,
    rule: QuadRule,
    name: String,
}

pub fn quadrature_discrete_data(sys: System, d: DiscretizationTq, rule: QuadRule) -> Result<QuadratureDataTq> {
    Error::check_dim(sys.dim(), d.dim())?;
    if let QuadRule::Gauss(0) = rule {
        return Err(Error::InvalidArgument("a Gauss rule needs at least one node".into()));
    }
    let name = match rule {
        QuadRule::Rectangle => "rectangle".to_string(),
        QuadRule::Trapezoid => "trapezoid".to_string(),
        QuadRule::Midpoint => "midpoint".to_string(),
        QuadRule::Gauss(k) => format!("gauss{k}"),
    };
    Ok(QuadratureDataTq { sys, disc: d, rule, name })
}

impl QuadratureDataTq {
    pub fn rule(&self) -> QuadRule {
        self.rule
    }

    pub fn discretization(&self) -> &DiscretizationTq {
        &self.disc
    }

    fn curve_state(&self, h: f64, t: f64, s: &StateTq) -> Result<StateTq> {
        Ok(StateTq { q: self.disc.psi(h, t, s)?, v: self.disc.psi_velocity(h, t, s)? })
    }
}

impl DiscreteDataTq for QuadratureDataTq {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn lagrangian(&self, h: f64, s: &StateTq) -> Result<f64> {
        let mut acc = 0.0;
        for (t, w) in self.rule.nodes(self.disc.alpha.minus(h), self.disc.alpha.plus(h)) {
            acc += w * self.sys.eval_lagrangian(&self.curve_state(h, t, s)?)?;
        }
        Ok(acc)
    }

    fn force(&self, h: f64, s: &StateTq) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(2 * self.dim());
        for (t, w) in self.rule.nodes(self.disc.alpha.minus(h), self.disc.alpha.plus(h)) {
            let f = self.sys.eval_force(&self.curve_state(h, t, s)?)?;
            acc += self.disc.psi_jacobian(h, t, s)?.transpose() * f * w;
        }
        Ok(acc)
    }

    /// Chain rule through the curve: `Σ w (∂_q L · ∂ψ + ∂_v L · ∂ψ̇)`.
    fn lagrangian_gradient(&self, h: f64, s: &StateTq) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(2 * self.dim());
        for (t, w) in self.rule.nodes(self.disc.alpha.minus(h), self.disc.alpha.plus(h)) {
            let x = self.curve_state(h, t, s)?;
            let jq = self.disc.psi_jacobian(h, t, s)?;
            let jv = self.disc.psi_velocity_jacobian(h, t, s)?;
            acc += (jq.transpose() * self.sys.position_gradient(&x)? + jv.transpose() * self.sys.fiber_derivative(&x)?) * w;
        }
        Ok(acc)
    }

    fn declared_order(&self) -> Option<usize> {
        // Straight segments only interpolate to second order, whatever the rule.
        match self.disc.kind() {
            DiscretizationKind::Linear => Some(self.rule.order().min(2)),
            _ => Some(self.rule.order()),
        }
    }

    fn system(&self) -> Option<&System> {
        Some(&self.sys)
    }
}

type TqScalarFn = Arc<dyn Fn(f64, &StateTq) -> Result<f64> + Send + Sync>;
type TqCovectorFn = Arc<dyn Fn(f64, &StateTq) -> Result<DVector<f64>> + Send + Sync>;

/// Discrete TQ data given directly by closures.
#[derive(Clone)]
pub struct FnDataTq {
    n: usize,
    name: String,
    lagrangian: TqScalarFn,
    force: TqCovectorFn,
    order: Option<usize>,
    sys: Option<System>,
}

impl fmt::Debug for FnDataTq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnDataTq({})", self.name)
    }
}

impl FnDataTq {
    pub fn new(
        n: usize,
        name: impl Into<String>,
        lagrangian: impl Fn(f64, &StateTq) -> Result<f64> + Send + Sync + 'static,
        force: impl Fn(f64, &StateTq) -> Result<DVector<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            name: name.into(),
            lagrangian: Arc::new(lagrangian),
            force: Arc::new(force),
            order: None,
            sys: None,
        }
    }

    pub fn with_order(mut self, r: usize) -> Self {
        self.order = Some(r);
        self
    }

    pub fn with_system(mut self, sys: System) -> Self {
        self.sys = Some(sys);
        self
    }
}

impl DiscreteDataTq for FnDataTq {
    fn dim(&self) -> usize {
        self.n
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn lagrangian(&self, h: f64, s: &StateTq) -> Result<f64> {
        Error::check_dim(self.n, s.dim())?;
        (self.lagrangian)(h, s)
    }

    fn force(&self, h: f64, s: &StateTq) -> Result<DVector<f64>> {
        Error::check_dim(self.n, s.dim())?;
        let f = (self.force)(h, s)?;
        Error::check_dim(2 * self.n, f.len())?;
        Ok(f)
    }

    fn declared_order(&self) -> Option<usize> {
        self.order
    }

    fn system(&self) -> Option<&System> {
        self.sys.as_ref()
    }
}

/// Worst violation of each discretization axiom over a sample grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    /// `max |α⁺(h) − α⁻(h) − h|`.
    pub alpha_difference: f64,
    /// `max(h α⁻(h), −h α⁺(h), 0)`.
    pub alpha_sign: f64,
    /// `max ‖ψ(h, 0, s) − q‖`.
    pub psi_at_zero: f64,
    /// `max ‖∂ψ/∂t(h, 0, s) − v‖` by central differences.
    pub velocity_at_zero: f64,
    pub ok: bool,
}

pub const AXIOM_TOL: f64 = 1e-12;
pub const AXIOM_VELOCITY_TOL: f64 = 1e-8;

pub fn verify_discretization_axioms(d: &DiscretizationTq, hs: &[f64], states: &[StateTq]) -> Result<AxiomReport> {
    if hs.is_empty() || states.is_empty() {
        return Err(Error::InvalidArgument("axiom check needs step sizes and states".into()));
    }
    let mut report = AxiomReport { alpha_difference: 0.0, alpha_sign: 0.0, psi_at_zero: 0.0, velocity_at_zero: 0.0, ok: false };
    let scale = default_fd_scale();
    for &h in hs {
        let (am, ap) = (d.alpha.minus(h), d.alpha.plus(h));
        report.alpha_difference = report.alpha_difference.max((ap - am - h).abs());
        report.alpha_sign = report.alpha_sign.max(h * am).max(-h * ap);
        for s in states {
            report.psi_at_zero = report.psi_at_zero.max((d.psi(h, 0.0, s)? - &s.q).amax());
            // central differences keep the check independent of any analytic velocity
            let step = scale;
            let fd = (d.psi(h, step, s)? - d.psi(h, -step, s)?) / (2.0 * step);
            let tol_scale = 1.0f64.max(max_norm(&s.v));
            report.velocity_at_zero = report.velocity_at_zero.max((fd - &s.v).amax() / tol_scale);
        }
    }
    report.ok = report.alpha_difference <= AXIOM_TOL
        && report.alpha_sign <= AXIOM_TOL
        && report.psi_at_zero <= AXIOM_TOL
        && report.velocity_at_zero <= AXIOM_VELOCITY_TOL;
    Ok(report)
}

/// Worst violations of `L_cp = h L + O(h²)` and `f_cp = h f + O(h²)` over sample states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub lagrangian_at_zero: f64,
    pub force_at_zero: f64,
    pub lagrangian_slope_error: f64,
    pub force_slope_error: f64,
    pub ok: bool,
}

pub const CONSISTENCY_TOL: f64 = 1e-6;

pub fn check_consistency_order1(sys: &System, data: &dyn DiscreteDataTq, states: &[StateTq]) -> Result<ConsistencyReport> {
    if states.is_empty() {
        return Err(Error::InvalidArgument("consistency check needs sample states".into()));
    }
    let mut r = ConsistencyReport {
        lagrangian_at_zero: 0.0,
        force_at_zero: 0.0,
        lagrangian_slope_error: 0.0,
        force_slope_error: 0.0,
        ok: false,
    };
    let mut ok = true;
    let dh = default_fd_scale();
    for s in states {
        let l0 = data.lagrangian(0.0, s)?;
        let f0 = data.force(0.0, s)?;
        r.lagrangian_at_zero = r.lagrangian_at_zero.max(l0.abs());
        r.force_at_zero = r.force_at_zero.max(f0.amax());
        let dl = (data.lagrangian(dh, s)? - data.lagrangian(-dh, s)?) / (2.0 * dh);
        let df = (data.force(dh, s)? - data.force(-dh, s)?) / (2.0 * dh);
        let l = sys.eval_lagrangian(s)?;
        let f = sys.horizontal_force(s)?;
        let le = (dl - l).abs();
        let fe = (df - &f).amax();
        r.lagrangian_slope_error = r.lagrangian_slope_error.max(le);
        r.force_slope_error = r.force_slope_error.max(fe);
        ok &= l0.abs() <= CONSISTENCY_TOL
            && f0.amax() <= CONSISTENCY_TOL
            && le <= CONSISTENCY_TOL * (1.0 + l.abs())
            && fe <= CONSISTENCY_TOL * (1.0 + f.amax());
    }
    r.ok = ok;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    fn particle_oracle(alpha: f64) -> FlowOracle {
        FlowOracle::analytic(systems::damped_particle(alpha), settings()).unwrap()
    }

    fn samples() -> Vec<StateTq> {
        vec![StateTq::scalar(0.0, 1.0), StateTq::scalar(-0.4, 0.3), StateTq::scalar(1.3, -2.0)]
    }

    #[test]
    fn linear_boundary_maps() {
        let d = DiscretizationTq::linear(1);
        let s = StateTq::scalar(1.0, 2.0);
        let (qm, qp) = d.boundary_pm(0.5, &s).unwrap();
        assert_eq!(qm[0], 1.0);
        assert_eq!(qp[0], 2.0);
        assert_relative_eq!(d.psi(0.3, 0.1, &s).unwrap()[0], 1.2, epsilon = 1e-15);
        let (qm, qp) = d.boundary_pm(0.0, &s).unwrap();
        assert_eq!((qm[0], qp[0]), (1.0, 1.0));
    }

    #[test]
    fn exact_boundary_maps_of_damped_particle() {
        let d = DiscretizationTq::exact(particle_oracle(1.0), AlphaPair::one_sided());
        let s = StateTq::scalar(0.0, 1.0);
        assert_eq!(d.boundary_minus(1.0, &s).unwrap()[0], 0.0);
        assert_relative_eq!(d.boundary_plus(1.0, &s).unwrap()[0], 1.0 - (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn free_particle_exact_curve_is_linear() {
        let exact = DiscretizationTq::exact(
            FlowOracle::analytic(systems::free_particle(1), settings()).unwrap(),
            AlphaPair::one_sided(),
        );
        let linear = DiscretizationTq::linear(1);
        let s = StateTq::scalar(0.2, -0.7);
        for t in [0.0, 0.1, 0.5, -0.3] {
            assert_relative_eq!(exact.psi(0.5, t, &s).unwrap(), linear.psi(0.5, t, &s).unwrap(), epsilon = 1e-15);
        }
    }

    #[test]
    fn axioms_hold_for_builtins_and_fail_for_broken_alpha() {
        let hs: Vec<f64> = (0..=10).flat_map(|k| [0.4 * 0.5f64.powi(k), -0.4 * 0.5f64.powi(k)]).collect();
        let ds = vec![
            DiscretizationTq::linear(1),
            DiscretizationTq::linear_with(1, AlphaPair::symmetric()),
            DiscretizationTq::exact(particle_oracle(1.0), AlphaPair::one_sided()),
            truncated_exact_friction(1.0, 3).unwrap().0,
        ];
        for d in &ds {
            let r = verify_discretization_axioms(d, &hs, &samples()).unwrap();
            assert!(r.ok, "{d:?}: {r:?}");
            assert!(r.alpha_difference <= 1e-14);
        }
        let broken = DiscretizationTq::linear(1).with_alpha(AlphaPair::custom("broken", |_| 0.0, |h| 2.0 * h));
        let r = verify_discretization_axioms(&broken, &hs, &samples()).unwrap();
        assert!(!r.ok);
        assert_relative_eq!(r.alpha_difference, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn truncated_order_one_is_linear() {
        let (d, _) = truncated_exact_friction(1.0, 1).unwrap();
        let s = StateTq::scalar(0.5, 2.0);
        assert_relative_eq!(d.psi(0.3, 0.2, &s).unwrap()[0], 0.9, epsilon = 1e-15);
        assert!(truncated_exact_friction(1.0, 0).is_err());
    }

    #[test]
    fn truncated_converges_to_exact() {
        let (d, data) = truncated_exact_friction(1.0, 25).unwrap();
        let exact = DiscretizationTq::exact(particle_oracle(1.0), AlphaPair::one_sided());
        let s = StateTq::scalar(0.3, 1.5);
        assert_relative_eq!(d.boundary_plus(0.7, &s).unwrap(), exact.boundary_plus(0.7, &s).unwrap(), epsilon = 1e-14);
        let ed = exact_discrete_data_tq(particle_oracle(1.0), AlphaPair::one_sided(), &settings());
        assert_relative_eq!(data.lagrangian(0.7, &s).unwrap(), ed.lagrangian(0.7, &s).unwrap(), epsilon = 1e-12);
        assert_relative_eq!(data.force(0.7, &s).unwrap(), ed.force(0.7, &s).unwrap(), epsilon = 1e-12);
    }

    /// Integrating `½ v² e^{-2αt}` over `[0, h]` gives `v² (1 − e^{-2αh}) / (4α)`. The velocity
    /// enters squared; a form linear in `v` would disagree with the quadrature here.
    #[test]
    fn exact_data_matches_hand_integrated_closed_forms() {
        for alpha in [0.5, 1.0, 2.0] {
            let data = exact_discrete_data_tq(particle_oracle(alpha), AlphaPair::one_sided(), &settings());
            for h in [0.05, 0.3, 1.0] {
                let (q, v) = (0.4, -1.3);
                let s = StateTq::scalar(q, v);
                let e1 = 1.0 - (-alpha * h).exp();
                let e2 = 1.0 - (-2.0 * alpha * h).exp();
                let vals = data.evaluate(h, &s).unwrap();
                assert_relative_eq!(vals.lagrangian, v * v * e2 / (4.0 * alpha), epsilon = 1e-12);
                assert_relative_eq!(vals.force[0], -v * e1, epsilon = 1e-12);
                assert_relative_eq!(vals.force[1], -v * (e1 - 0.5 * e2) / alpha, epsilon = 1e-12);
                assert_relative_eq!(vals.gradient[0], 0.0, epsilon = 1e-14);
                assert_relative_eq!(vals.gradient[1], v * e2 / (2.0 * alpha), epsilon = 1e-12);
            }
        }
        let data = exact_discrete_data_tq(particle_oracle(1.0), AlphaPair::one_sided(), &settings());
        let zero = data.evaluate(0.0, &StateTq::scalar(1.0, 1.0)).unwrap();
        assert_eq!(zero.lagrangian, 0.0);
        assert_eq!(zero.force, DVector::zeros(2));
    }

    #[test]
    fn quadrature_gradient_matches_finite_differences() {
        let sys = systems::forced_pendulum(9.81, 0.3, 0.1);
        for rule in [QuadRule::Rectangle, QuadRule::Trapezoid, QuadRule::Midpoint, QuadRule::Gauss(3)] {
            let data = quadrature_discrete_data(sys.clone(), DiscretizationTq::linear(1), rule).unwrap();
            let s = StateTq::scalar(0.4, -0.8);
            let analytic = data.lagrangian_gradient(0.2, &s).unwrap();
            let fd = crate::numeric::fd_gradient(
                |x| data.lagrangian(0.2, &StateTq::from_vector(x)),
                &s.to_vector(),
                default_fd_scale(),
            )
            .unwrap();
            assert_relative_eq!(analytic, fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn midpoint_rule_on_linear_is_classical_midpoint() {
        let sys = systems::forced_oscillator(2.0, 0.3);
        let data = quadrature_discrete_data(sys.clone(), DiscretizationTq::linear(1), QuadRule::Midpoint).unwrap();
        let (h, q, v) = (0.25, 0.7, -0.4);
        let s = StateTq::scalar(q, v);
        let expected = h * sys.eval_lagrangian(&StateTq::scalar(q + 0.5 * h * v, v)).unwrap();
        assert_relative_eq!(data.lagrangian(h, &s).unwrap(), expected, epsilon = 1e-15);
        assert_eq!(data.lagrangian(0.0, &s).unwrap(), 0.0);
    }

    #[test]
    fn consistency_passes_for_builtins() {
        let sys = systems::damped_particle(1.0);
        let exact = exact_discrete_data_tq(particle_oracle(1.0), AlphaPair::one_sided(), &settings());
        assert!(check_consistency_order1(&sys, &exact, &samples()).unwrap().ok);
        for r in 1..=3 {
            let (_, data) = truncated_exact_friction(1.0, r).unwrap();
            assert!(check_consistency_order1(&sys, &data, &samples()).unwrap().ok, "r = {r}");
        }
        for rule in [QuadRule::Rectangle, QuadRule::Trapezoid, QuadRule::Midpoint, QuadRule::Gauss(2)] {
            let data = quadrature_discrete_data(sys.clone(), DiscretizationTq::linear(1), rule).unwrap();
            assert!(check_consistency_order1(&sys, &data, &samples()).unwrap().ok, "{rule:?}");
        }
    }

    #[test]
    fn consistency_rejects_quadratic_lagrangian() {
        let sys = systems::damped_particle(1.0);
        let inner = sys.clone();
        let bad = FnDataTq::new(
            1,
            "h_squared",
            move |h, s| Ok(h * h * inner.eval_lagrangian(s)?),
            |h, s| Ok(DVector::from_vec(vec![-h * s.v[0], 0.0])),
        );
        let r = check_consistency_order1(&sys, &bad, &samples()).unwrap();
        assert!(!r.ok);
        assert!(r.lagrangian_slope_error > 0.4);
    }

    #[test]
    fn symmetric_exact_data_is_even_for_free_particle() {
        let oracle = FlowOracle::analytic(systems::free_particle(1), settings()).unwrap();
        let data = exact_discrete_data_tq(oracle, AlphaPair::symmetric(), &settings());
        let s = StateTq::scalar(0.3, 1.1);
        // ∫_{-h/2}^{h/2} v²/2 dt = h v²/2, odd in h; reversing the pair flips the orientation
        let l = data.lagrangian(0.4, &s).unwrap();
        assert_relative_eq!(l, 0.4 * 0.5 * 1.21, epsilon = 1e-14);
        assert_relative_eq!(data.lagrangian(-0.4, &s).unwrap(), -l, epsilon = 1e-14);
    }

    #[test]
    fn domain_bound_is_enforced() {
        let d = DiscretizationTq::linear(1).with_bound(0.5);
        assert!(matches!(d.boundary_plus(0.6, &StateTq::scalar(0.0, 1.0)), Err(Error::StepOutOfDomain { .. })));
        assert!(d.boundary_plus(0.4, &StateTq::scalar(0.0, 1.0)).is_ok());
    }
}
