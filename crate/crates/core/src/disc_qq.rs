//! Discrete data on Q×Q and its link to the TQ side.
//!
//! Discrete data on Q×Q is a discrete Lagrangian `L_d(h, q0, q1)` with a discrete force
//! split into `f⁻` (a covector at q0) and `f⁺` (a covector at q1). TQ data is carried
//! over by composing with the inverse of the boundary maps `(∂⁻_h, ∂⁺_h)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::disc_tq::{AlphaPair, DiscreteDataTq, DiscretizationKind, DiscretizationTq};
use crate::error::{Error, Result};
use crate::flow::FlowOracle;
use crate::fms::{StateTq, System};
use crate::numeric::{max_norm, newton, solve_matrix, NewtonOptions};
use crate::quadrature::integrate;
use crate::settings::SolverSettings;

/// Values of Q×Q data at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct QqValues {
    pub lagrangian: f64,
    /// `D₁L_d`.
    pub d1: DVector<f64>,
    /// `D₂L_d`.
    pub d2: DVector<f64>,
    pub f_minus: DVector<f64>,
    pub f_plus: DVector<f64>,
}

impl QqValues {
    /// `−D₁L_d − f⁻`.
    pub fn momentum_minus(&self) -> DVector<f64> {
        -(&self.d1 + &self.f_minus)
    }

    /// `D₂L_d + f⁺`.
    pub fn momentum_plus(&self) -> DVector<f64> {
        &self.d2 + &self.f_plus
    }
}

pub trait DiscreteDataQq: Send + Sync {
    fn dim(&self) -> usize;

    fn name(&self) -> &str;

    fn lagrangian(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<f64>;

    /// `(f⁻, f⁺)`.
    fn forces(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)>;

    /// `(D₁L_d, D₂L_d)`, by central differences unless overridden.
    fn gradient(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let scale = SolverSettings::default().fd_step_scale;
        let d1 = crate::numeric::fd_gradient(|x| self.lagrangian(h, x, q1), q0, scale)?;
        let d2 = crate::numeric::fd_gradient(|x| self.lagrangian(h, q0, x), q1, scale)?;
        Ok((d1, d2))
    }

    fn evaluate(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<QqValues> {
        let (d1, d2) = self.gradient(h, q0, q1)?;
        let (f_minus, f_plus) = self.forces(h, q0, q1)?;
        Ok(QqValues { lagrangian: self.lagrangian(h, q0, q1)?, d1, d2, f_minus, f_plus })
    }

    fn admissible(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> bool {
        h != 0.0 && h.is_finite() && q0.iter().chain(q1.iter()).all(|x| x.is_finite())
    }

    fn declared_order(&self) -> Option<usize> {
        None
    }

    fn system(&self) -> Option<&System> {
        None
    }
}

fn check_pair(n: usize, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<()> {
    Error::check_dim(n, q0.len())?;
    Error::check_dim(n, q1.len())?;
    if h == 0.0 {
        return Err(Error::ZeroStep);
    }
    Ok(())
}

/// `𝔽^{f−}L_d = −D₁L_d(q0, q1) − f⁻(q0, q1)`.
pub fn discrete_legendre_minus(d: &dyn DiscreteDataQq, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(d.evaluate(h, q0, q1)?.momentum_minus())
}

/// `𝔽^{f+}L_d = D₂L_d(q0, q1) + f⁺(q0, q1)`.
pub fn discrete_legendre_plus(d: &dyn DiscreteDataQq, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(d.evaluate(h, q0, q1)?.momentum_plus())
}

/// Solution of `∂∓_h(s) = (q0, q1)` together with the inverse of the boundary Jacobian
/// `[T∂⁻; T∂⁺]`, whose first n columns are `∂s/∂q0` and last n columns `∂s/∂q1`.
#[derive(Debug, Clone)]
pub struct BoundaryInverse {
    pub state: StateTq,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
}

pub fn boundary_inverse(
    d: &DiscretizationTq,
    h: f64,
    q0: &DVector<f64>,
    q1: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<StateTq> {
    Ok(boundary_inverse_full(d, h, q0, q1, None, settings)?.state)
}

/// As [`boundary_inverse`], optionally starting Newton from `guess`.
pub fn boundary_inverse_full(
    d: &DiscretizationTq,
    h: f64,
    q0: &DVector<f64>,
    q1: &DVector<f64>,
    guess: Option<&StateTq>,
    settings: &SolverSettings,
) -> Result<BoundaryInverse> {
    let n = d.dim();
    check_pair(n, h, q0, q1)?;
    d.check_h(h)?;
    let chord = (q1 - q0) / h;

    if *d.kind() == DiscretizationKind::Linear {
        let am = d.alpha().minus(h);
        let state = StateTq { q: q0 - &chord * am, v: chord };
        let jacobian = boundary_jacobian_inverse(d, h, &state)?;
        return Ok(BoundaryInverse { state, jacobian, iterations: 0 });
    }

    let opts = NewtonOptions::new(settings.newton_tol, settings.newton_max_iter);
    let (state, iterations) = if d.alpha().is_one_sided() {
        // ∂⁻ is the identity on q, so only the velocity is unknown
        let solve_from = |v0: DVector<f64>| {
            newton(
                |v| Ok(d.boundary_plus(h, &StateTq { q: q0.clone(), v: v.clone() })? - q1),
                |v, _| {
                    let j = d.psi_jacobian(h, h, &StateTq { q: q0.clone(), v: v.clone() })?;
                    Ok(j.columns(n, n).into_owned())
                },
                v0,
                opts,
            )
        };
        let first = guess.map(|g| g.v.clone()).unwrap_or_else(|| chord.clone());
        let out = match solve_from(first) {
            Ok(out) => out,
            Err(first_err) => {
                let predictor = shooting_predictor(d, h, q0, &chord).ok_or(first_err)?;
                solve_from(predictor)?
            }
        };
        (StateTq { q: q0.clone(), v: out.x }, out.iterations)
    } else {
        let start = guess.cloned().unwrap_or_else(|| StateTq { q: q0 - &chord * d.alpha().minus(h), v: chord.clone() });
        let out = newton(
            |x| {
                let (qm, qp) = d.boundary_pm(h, &StateTq::from_vector(x))?;
                let mut r = DVector::zeros(2 * n);
                r.rows_mut(0, n).copy_from(&(qm - q0));
                r.rows_mut(n, n).copy_from(&(qp - q1));
                Ok(r)
            },
            |x, _| stacked_boundary_jacobian(d, h, &StateTq::from_vector(x)),
            start.to_vector(),
            opts,
        )?;
        (StateTq::from_vector(&out.x), out.iterations)
    };
    let jacobian = boundary_jacobian_inverse(d, h, &state)?;
    Ok(BoundaryInverse { state, jacobian, iterations })
}

/// Second-order guess `v ≈ (q1 − q0)/h − (h/2) a(q0, (q1 − q0)/h)` when the
/// discretization knows its system.
fn shooting_predictor(d: &DiscretizationTq, h: f64, q0: &DVector<f64>, chord: &DVector<f64>) -> Option<DVector<f64>> {
    let sys = d.oracle()?.system();
    let a = sys.el_acceleration(&StateTq { q: q0.clone(), v: chord.clone() }).ok()?;
    Some(chord - a * (0.5 * h))
}

fn stacked_boundary_jacobian(d: &DiscretizationTq, h: f64, s: &StateTq) -> Result<DMatrix<f64>> {
    let n = d.dim();
    let (jm, jp) = d.boundary_jacobians(h, s)?;
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.rows_mut(0, n).copy_from(&jm);
    m.rows_mut(n, n).copy_from(&jp);
    Ok(m)
}

fn boundary_jacobian_inverse(d: &DiscretizationTq, h: f64, s: &StateTq) -> Result<DMatrix<f64>> {
    let m = stacked_boundary_jacobian(d, h, s)?;
    let k = m.nrows();
    solve_matrix(m, &DMatrix::identity(k, k))
}

/// TQ data carried to Q×Q through the inverse boundary maps.
#[derive(Clone)]
pub struct TqToQq {
    data: Arc<dyn DiscreteDataTq>,
    disc: DiscretizationTq,
    settings: SolverSettings,
    name: String,
}

impl fmt::Debug for TqToQq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TqToQq({})", self.name)
    }
}

pub fn to_qq(data_tq: Arc<dyn DiscreteDataTq>, d: DiscretizationTq, settings: &SolverSettings) -> Result<TqToQq> {
    Error::check_dim(data_tq.dim(), d.dim())?;
    let name = format!("{}_qq", data_tq.name());
    Ok(TqToQq { data: data_tq, disc: d, settings: *settings, name })
}

impl TqToQq {
    /// Evaluates at `(q0, q1)` starting the boundary inversion from `guess`.
    pub fn evaluate_from(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>, guess: Option<&StateTq>) -> Result<QqValues> {
        let n = self.dim();
        let inv = boundary_inverse_full(&self.disc, h, q0, q1, guess, &self.settings)?;
        let vals = self.data.evaluate(h, &inv.state)?;
        // pull back through ∂s/∂(q0, q1)
        let dl = inv.jacobian.transpose() * &vals.gradient;
        let f = inv.jacobian.transpose() * &vals.force;
        Ok(QqValues {
            lagrangian: vals.lagrangian,
            d1: dl.rows(0, n).into_owned(),
            d2: dl.rows(n, n).into_owned(),
            f_minus: f.rows(0, n).into_owned(),
            f_plus: f.rows(n, n).into_owned(),
        })
    }

    pub fn discretization(&self) -> &DiscretizationTq {
        &self.disc
    }
}

impl DiscreteDataQq for TqToQq {
    fn dim(&self) -> usize {
        self.disc.dim()
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn lagrangian(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<f64> {
        let s = boundary_inverse(&self.disc, h, q0, q1, &self.settings)?;
        self.data.lagrangian(h, &s)
    }

    fn forces(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let v = self.evaluate(h, q0, q1)?;
        Ok((v.f_minus, v.f_plus))
    }

    fn gradient(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let v = self.evaluate(h, q0, q1)?;
        Ok((v.d1, v.d2))
    }

    fn evaluate(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<QqValues> {
        self.evaluate_from(h, q0, q1, None)
    }

    fn declared_order(&self) -> Option<usize> {
        self.data.declared_order()
    }

    fn system(&self) -> Option<&System> {
        self.data.system()
    }
}

/// Exact Q×Q data: the boundary-value solution `q₀₁(t)` of the continuous system is
/// found by shooting, and `L_d`, `f_d^∓` and their derivatives are integrals along it.
#[derive(Debug, Clone)]
pub struct ExactDataQq {
    oracle: FlowOracle,
    disc: DiscretizationTq,
    settings: SolverSettings,
}

pub fn exact_discrete_data_qq(oracle: FlowOracle, settings: &SolverSettings) -> ExactDataQq {
    let disc = DiscretizationTq::exact(oracle.clone(), AlphaPair::one_sided());
    ExactDataQq { oracle, disc, settings: *settings }
}

impl ExactDataQq {
    /// Initial velocity `v₀₁` of the boundary-value solution.
    pub fn shooting_velocity(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(boundary_inverse(&self.disc, h, q0, q1, &self.settings)?.v)
    }

    pub fn oracle(&self) -> &FlowOracle {
        &self.oracle
    }
}

impl DiscreteDataQq for ExactDataQq {
    fn dim(&self) -> usize {
        self.oracle.system().dim()
    }

    fn name(&self) -> &str {
        "exact"
    }

    fn lagrangian(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<f64> {
        Ok(self.evaluate(h, q0, q1)?.lagrangian)
    }

    fn forces(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let v = self.evaluate(h, q0, q1)?;
        Ok((v.f_minus, v.f_plus))
    }

    fn gradient(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let v = self.evaluate(h, q0, q1)?;
        Ok((v.d1, v.d2))
    }

    fn evaluate(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<QqValues> {
        let sys = self.oracle.system();
        let n = sys.dim();
        let m = 2 * n;
        check_pair(n, h, q0, q1)?;
        let v01 = self.shooting_velocity(h, q0, q1)?;
        let s0 = StateTq { q: q0.clone(), v: v01 };

        // implicit-function sensitivities of the initial state with respect to (q0, q1)
        let (_, phi_h) = self.oracle.flow_with_tangent(h, &s0)?;
        let phi_qq = phi_h.view((0, 0), (n, n)).into_owned();
        let phi_qv = phi_h.view((0, n), (n, n)).into_owned();
        let mut rhs = DMatrix::zeros(n, m);
        rhs.view_mut((0, 0), (n, n)).copy_from(&(-phi_qq));
        rhs.view_mut((0, n), (n, n)).copy_from(&DMatrix::identity(n, n));
        let dv = solve_matrix(phi_qv, &rhs)?;
        let mut sens = DMatrix::zeros(m, m);
        sens.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
        sens.view_mut((n, 0), (n, m)).copy_from(&dv);

        let total = integrate(
            |t| {
                let (x, phi) = self.oracle.flow_with_tangent(t, &s0)?;
                let dx = phi * &sens;
                let mut out = DVector::zeros(1 + 2 * m);
                out[0] = sys.eval_lagrangian(&x)?;
                out.rows_mut(1, m).copy_from(&(dx.transpose() * sys.lagrangian_differential(&x)?));
                out.rows_mut(1 + m, m).copy_from(&(dx.rows(0, n).transpose() * sys.eval_force(&x)?));
                Ok(out)
            },
            0.0,
            h,
            1 + 2 * m,
            self.settings.quad_tol,
        )?;
        Ok(QqValues {
            lagrangian: total[0],
            d1: total.rows(1, n).into_owned(),
            d2: total.rows(1 + n, n).into_owned(),
            f_minus: total.rows(1 + m, n).into_owned(),
            f_plus: total.rows(1 + m + n, n).into_owned(),
        })
    }

    fn system(&self) -> Option<&System> {
        Some(self.oracle.system())
    }
}

/// `L_d = h L((q0 + q1)/2, (q1 − q0)/h)` with `f⁻ = f⁺ = (h/2) f̌` at the same point.
#[derive(Debug, Clone)]
pub struct MidpointDataQq {
    sys: System,
}

pub fn midpoint_data_qq(sys: System) -> MidpointDataQq {
    MidpointDataQq { sys }
}

impl MidpointDataQq {
    fn point(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<StateTq> {
        check_pair(self.sys.dim(), h, q0, q1)?;
        Ok(StateTq { q: (q0 + q1) * 0.5, v: (q1 - q0) / h })
    }
}

impl DiscreteDataQq for MidpointDataQq {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn name(&self) -> &str {
        "midpoint"
    }

    fn lagrangian(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<f64> {
        Ok(h * self.sys.eval_lagrangian(&self.point(h, q0, q1)?)?)
    }

    fn forces(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let f = self.sys.eval_force(&self.point(h, q0, q1)?)? * (0.5 * h);
        Ok((f.clone(), f))
    }

    fn gradient(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let x = self.point(h, q0, q1)?;
        let dq = self.sys.position_gradient(&x)? * (0.5 * h);
        let dv = self.sys.fiber_derivative(&x)?;
        Ok((&dq - &dv, dq + dv))
    }

    fn declared_order(&self) -> Option<usize> {
        Some(2)
    }

    fn system(&self) -> Option<&System> {
        Some(&self.sys)
    }
}

/// `L_d = (h/2)[L(q0, w) + L(q1, w)]` with `w = (q1 − q0)/h`, `f⁻ = (h/2) f̌(q0, w)` and
/// `f⁺ = (h/2) f̌(q1, w)`.
#[derive(Debug, Clone)]
pub struct TrapezoidDataQq {
    sys: System,
}

pub fn trapezoid_data_qq(sys: System) -> TrapezoidDataQq {
    TrapezoidDataQq { sys }
}

impl TrapezoidDataQq {
    fn ends(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<(StateTq, StateTq)> {
        check_pair(self.sys.dim(), h, q0, q1)?;
        let w = (q1 - q0) / h;
        Ok((StateTq { q: q0.clone(), v: w.clone() }, StateTq { q: q1.clone(), v: w }))
    }
}

impl DiscreteDataQq for TrapezoidDataQq {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn name(&self) -> &str {
        "trapezoid"
    }

    fn lagrangian(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<f64> {
        let (a, b) = self.ends(h, q0, q1)?;
        Ok(0.5 * h * (self.sys.eval_lagrangian(&a)? + self.sys.eval_lagrangian(&b)?))
    }

    fn forces(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let (a, b) = self.ends(h, q0, q1)?;
        Ok((self.sys.eval_force(&a)? * (0.5 * h), self.sys.eval_force(&b)? * (0.5 * h)))
    }

    fn gradient(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let (a, b) = self.ends(h, q0, q1)?;
        let p = (self.sys.fiber_derivative(&a)? + self.sys.fiber_derivative(&b)?) * 0.5;
        let d1 = self.sys.position_gradient(&a)? * (0.5 * h) - &p;
        let d2 = self.sys.position_gradient(&b)? * (0.5 * h) + p;
        Ok((d1, d2))
    }

    fn declared_order(&self) -> Option<usize> {
        Some(2)
    }

    fn system(&self) -> Option<&System> {
        Some(&self.sys)
    }
}

type QqScalarFn = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> Result<f64> + Send + Sync>;
type QqForceFn = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> + Send + Sync>;

/// Q×Q data from closures; derivatives by finite differences.
#[derive(Clone)]
pub struct FnDataQq {
    n: usize,
    name: String,
    lagrangian: QqScalarFn,
    forces: QqForceFn,
    order: Option<usize>,
}

impl fmt::Debug for FnDataQq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnDataQq({})", self.name)
    }
}

impl FnDataQq {
    pub fn new(
        n: usize,
        name: impl Into<String>,
        lagrangian: impl Fn(f64, &DVector<f64>, &DVector<f64>) -> Result<f64> + Send + Sync + 'static,
        forces: impl Fn(f64, &DVector<f64>, &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> + Send + Sync + 'static,
    ) -> Self {
        Self { n, name: name.into(), lagrangian: Arc::new(lagrangian), forces: Arc::new(forces), order: None }
    }

    pub fn with_order(mut self, r: usize) -> Self {
        self.order = Some(r);
        self
    }
}

impl DiscreteDataQq for FnDataQq {
    fn dim(&self) -> usize {
        self.n
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn lagrangian(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<f64> {
        check_pair(self.n, h, q0, q1)?;
        (self.lagrangian)(h, q0, q1)
    }

    fn forces(&self, h: f64, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        check_pair(self.n, h, q0, q1)?;
        (self.forces)(h, q0, q1)
    }

    fn declared_order(&self) -> Option<usize> {
        self.order
    }
}

/// Richardson consistency of finite-difference `D₁`/`D₂`: the largest relative gap
/// between central differences at steps `δ` and `δ/2`.
pub fn fd_gradient_consistency(d: &dyn DiscreteDataQq, h: f64, q0: &DVector<f64>, q1: &DVector<f64>, scale: f64) -> Result<f64> {
    let grad = |step_scale: f64| -> Result<(DVector<f64>, DVector<f64>)> {
        let d1 = crate::numeric::fd_gradient(|x| d.lagrangian(h, x, q1), q0, step_scale)?;
        let d2 = crate::numeric::fd_gradient(|x| d.lagrangian(h, q0, x), q1, step_scale)?;
        Ok((d1, d2))
    };
    let (a1, a2) = grad(scale)?;
    let (b1, b2) = grad(0.5 * scale)?;
    let size = 1.0f64.max(max_norm(&a1)).max(max_norm(&a2));
    Ok((&a1 - &b1).amax().max((&a2 - &b2).amax()) / size)
}
