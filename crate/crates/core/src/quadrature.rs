//! Gauss–Legendre rules and an adaptive composite integrator for vector-valued integrands.

use nalgebra::DVector;

use crate::error::{Error, Result};

const MAX_DEPTH: usize = 40;
const PANEL_POINTS: usize = 10;

/// Nodes and weights of the `k`-point Gauss–Legendre rule on [-1, 1], nodes ascending.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(k >= 1, "a Gauss rule needs at least one node");
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    let kf = k as f64;
    for i in 0..k.div_ceil(2) {
        // Chebyshev-like starting guess, then Newton on P_k.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (kf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(k, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(k, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[k - 1 - i] = x;
        weights[i] = w;
        weights[k - 1 - i] = w;
    }
    if k % 2 == 1 {
        nodes[k / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(k: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if k == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=k {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let kf = k as f64;
    let d = kf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Fixed rule with nodes and weights mapped onto an interval.
#[derive(Debug, Clone)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(points: usize) -> Self {
        let (nodes, weights) = gauss_legendre(points);
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// (node, weight) pairs for the oriented interval [a, b]; weights carry the sign of b - a.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn apply<F>(&self, f: &mut F, a: f64, b: f64, dim: usize) -> Result<DVector<f64>>
    where
        F: FnMut(f64) -> Result<DVector<f64>>,
    {
        let mut acc = DVector::zeros(dim);
        for (t, w) in self.mapped(a, b) {
            let value = f(t)?;
            Error::check_dim(dim, value.len())?;
            acc.axpy(w, &value, 1.0);
        }
        Ok(acc)
    }
}

/// Adaptive composite 10-point Gauss–Legendre quadrature of a vector integrand over the
/// oriented interval [a, b]. A panel is accepted when splitting it changes the estimate
/// by at most `tol * max(1, |estimate|)` in max norm.
pub fn integrate<F>(mut f: F, a: f64, b: f64, dim: usize, tol: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64) -> Result<DVector<f64>>,
{
    if a == b {
        return Ok(DVector::zeros(dim));
    }
    let rule = GaussRule::new(PANEL_POINTS);
    let whole = rule.apply(&mut f, a, b, dim)?;
    refine(&rule, &mut f, a, b, whole, tol, dim, 0)
}

#[allow(clippy::too_many_arguments)]
fn refine<F>(
    rule: &GaussRule,
    f: &mut F,
    a: f64,
    b: f64,
    whole: DVector<f64>,
    tol: f64,
    dim: usize,
    depth: usize,
) -> Result<DVector<f64>>
where
    F: FnMut(f64) -> Result<DVector<f64>>,
{
    let mid = 0.5 * (a + b);
    let left = rule.apply(f, a, mid, dim)?;
    let right = rule.apply(f, mid, b, dim)?;
    let split = &left + &right;
    let scale = split.amax().max(1.0);
    let change = (&split - &whole).amax();
    let floor = 64.0 * f64::EPSILON * scale;
    if change <= (tol * scale).max(floor) {
        return Ok(split);
    }
    if depth >= MAX_DEPTH {
        return Err(Error::QuadratureNoConvergence { a, b });
    }
    let l = refine(rule, f, a, mid, left, 0.5 * tol, dim, depth + 1)?;
    let r = refine(rule, f, mid, b, right, 0.5 * tol, dim, depth + 1)?;
    Ok(l + r)
}
