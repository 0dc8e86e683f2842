//! Built-in systems with analytic derivatives.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fms::{ClosedFormFlow, StateTq, System};

fn scalar_matrix(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// `(1 - e^{-a t}) / a`, continuous at `a = 0`.
fn decay_integral(a: f64, t: f64) -> f64 {
    if a == 0.0 {
        t
    } else {
        -(-a * t).exp_m1() / a
    }
}

struct DampedParticleFlow {
    alpha: f64,
}

impl ClosedFormFlow for DampedParticleFlow {
    fn flow(&self, t: f64, s: &StateTq) -> StateTq {
        let decay = (-self.alpha * t).exp();
        StateTq { q: &s.q + &s.v * decay_integral(self.alpha, t), v: &s.v * decay }
    }

    fn tangent(&self, t: f64, s: &StateTq) -> DMatrix<f64> {
        let n = s.dim();
        let mut m = DMatrix::identity(2 * n, 2 * n);
        let c = decay_integral(self.alpha, t);
        let decay = (-self.alpha * t).exp();
        for i in 0..n {
            m[(i, n + i)] = c;
            m[(n + i, n + i)] = decay;
        }
        m
    }
}

/// `L = |v|²/2`, `f̌ = -α v` on ℝⁿ. Exponentially decaying velocity, closed-form flow.
pub fn damped_particle_n(n: usize, alpha: f64) -> System {
    System::new("damped_particle", n, |_, v| 0.5 * v.norm_squared(), move |_, v| v * -alpha)
        .with_params(params(&[("alpha", alpha)]))
        .with_fiber_derivative(|_, v| v.clone())
        .with_position_gradient(move |q, _| DVector::zeros(q.len()))
        .with_fiber_hessian(move |q, _| DMatrix::identity(q.len(), q.len()))
        .with_mixed_hessian(move |q, _| DMatrix::zeros(q.len(), q.len()))
        .with_acceleration_jacobian(move |q, _| {
            let n = q.len();
            let mut j = DMatrix::zeros(n, 2 * n);
            for i in 0..n {
                j[(i, n + i)] = -alpha;
            }
            j
        })
        .with_closed_form(DampedParticleFlow { alpha })
}

pub fn damped_particle(alpha: f64) -> System {
    damped_particle_n(1, alpha)
}

/// `L = |v|²/2`, no force.
pub fn free_particle(n: usize) -> System {
    let mut sys = damped_particle_n(n, 0.0);
    sys = sys.with_params(BTreeMap::new());
    System::rename(sys, "free_particle")
}

/// `L = v²/2 - k q²/2`, `f̌ = -c v`.
pub fn forced_oscillator(stiffness: f64, damping: f64) -> System {
    let (k, c) = (stiffness, damping);
    System::new(
        "forced_oscillator",
        1,
        move |q, v| 0.5 * v[0] * v[0] - 0.5 * k * q[0] * q[0],
        move |_, v| v * -c,
    )
    .with_params(params(&[("damping", c), ("stiffness", k)]))
    .with_fiber_derivative(|_, v| v.clone())
    .with_position_gradient(move |q, _| q * -k)
    .with_fiber_hessian(|_, _| scalar_matrix(1.0))
    .with_mixed_hessian(|_, _| scalar_matrix(0.0))
    .with_acceleration_jacobian(move |_, _| DMatrix::from_row_slice(1, 2, &[-k, -c]))
}

/// `L = v²/2 + g cos q`, `f̌ = τ - c v` with a constant applied torque `τ`.
pub fn forced_pendulum(gravity: f64, damping: f64, torque: f64) -> System {
    let (g, c) = (gravity, damping);
    System::new(
        "forced_pendulum",
        1,
        move |q, v| 0.5 * v[0] * v[0] + g * q[0].cos(),
        move |_, v| DVector::from_element(1, torque - c * v[0]),
    )
    .with_params(params(&[("damping", c), ("gravity", g), ("torque", torque)]))
    .with_fiber_derivative(|_, v| v.clone())
    .with_position_gradient(move |q, _| DVector::from_element(1, -g * q[0].sin()))
    .with_fiber_hessian(|_, _| scalar_matrix(1.0))
    .with_mixed_hessian(|_, _| scalar_matrix(0.0))
    .with_acceleration_jacobian(move |q, _| DMatrix::from_row_slice(1, 2, &[-g * q[0].cos(), -c]))
}

/// `L = v²/2 - a q²/2 - b q⁴/4`, `f̌ = -c v`.
pub fn damped_duffing(linear: f64, cubic: f64, damping: f64) -> System {
    let (a, b, c) = (linear, cubic, damping);
    System::new(
        "damped_duffing",
        1,
        move |q, v| 0.5 * v[0] * v[0] - 0.5 * a * q[0] * q[0] - 0.25 * b * q[0].powi(4),
        move |_, v| v * -c,
    )
    .with_params(params(&[("cubic", b), ("damping", c), ("linear", a)]))
    .with_fiber_derivative(|_, v| v.clone())
    .with_position_gradient(move |q, _| DVector::from_element(1, -a * q[0] - b * q[0].powi(3)))
    .with_fiber_hessian(|_, _| scalar_matrix(1.0))
    .with_mixed_hessian(|_, _| scalar_matrix(0.0))
    .with_acceleration_jacobian(move |q, _| {
        DMatrix::from_row_slice(1, 2, &[-a - 3.0 * b * q[0] * q[0], -c])
    })
}

/// `L = vᵀMv/2 - qᵀKq/2`, `f̌ = -C v` on ℝⁿ with symmetric positive definite `M`.
pub fn linear_system(mass: DMatrix<f64>, stiffness: DMatrix<f64>, damping: DMatrix<f64>) -> System {
    let n = mass.nrows();
    assert!(mass.is_square() && stiffness.shape() == (n, n) && damping.shape() == (n, n));
    let (m, k, c) = (mass, stiffness, damping);
    let minv = m.clone().try_inverse().expect("mass matrix must be invertible");
    let (m1, m2, m3) = (m.clone(), m.clone(), m.clone());
    let (k1, k2, c1) = (k.clone(), k.clone(), c.clone());
    let jac_q = -&minv * &k;
    let jac_v = -&minv * &c;
    System::new(
        "linear_system",
        n,
        move |q, v| 0.5 * v.dot(&(&m1 * v)) - 0.5 * q.dot(&(&k1 * q)),
        move |_, v| -(&c1 * v),
    )
    .with_fiber_derivative(move |_, v| &m2 * v)
    .with_position_gradient(move |q, _| -(&k2 * q))
    .with_fiber_hessian(move |_, _| m3.clone())
    .with_mixed_hessian(move |_, _| DMatrix::zeros(n, n))
    .with_acceleration_jacobian(move |_, _| {
        let mut j = DMatrix::zeros(n, 2 * n);
        j.view_mut((0, 0), (n, n)).copy_from(&jac_q);
        j.view_mut((0, n), (n, n)).copy_from(&jac_v);
        j
    })
}

/// Names and required parameters of the systems that can be built by name.
pub const BUILTIN: &[(&str, &[&str])] = &[
    ("damped_particle", &["alpha"]),
    ("forced_oscillator", &["stiffness", "damping"]),
    ("forced_pendulum", &["gravity", "damping"]),
    ("damped_duffing", &["linear", "cubic", "damping"]),
];

/// Optional parameters, with their defaults.
pub const OPTIONAL: &[(&str, &str, f64)] = &[("forced_pendulum", "torque", 0.0)];

/// Builds a named system from a parameter map. The keys must match the system's
/// parameter list exactly and every value must be finite.
pub fn by_name(name: &str, p: &BTreeMap<String, f64>) -> Result<System> {
    let required = BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, r)| *r)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown system `{name}`")))?;
    for key in required {
        if !p.contains_key(*key) {
            return Err(Error::InvalidArgument(format!("system `{name}` requires parameter `{key}`")));
        }
    }
    for (key, value) in p {
        let known = required.contains(&key.as_str())
            || OPTIONAL.iter().any(|(n, k, _)| *n == name && k == key);
        if !known {
            return Err(Error::InvalidArgument(format!("system `{name}` has no parameter `{key}`")));
        }
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("parameter `{key}` must be finite")));
        }
    }
    let get = |k: &str| p.get(k).copied().unwrap_or(0.0);
    Ok(match name {
        "damped_particle" => damped_particle(get("alpha")),
        "forced_oscillator" => forced_oscillator(get("stiffness"), get("damping")),
        "forced_pendulum" => forced_pendulum(get("gravity"), get("damping"), get("torque")),
        "damped_duffing" => damped_duffing(get("linear"), get("cubic"), get("damping")),
        _ => unreachable!(),
    })
}
