//! Finite differences and a damped Newton solver shared by all the implicit steps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Absolute central-difference step for a point of size `size`.
pub fn fd_step(scale: f64, size: f64) -> f64 {
    scale * size.max(1.0)
}

pub fn max_norm(x: &DVector<f64>) -> f64 {
    x.amax()
}

pub fn ensure_finite(x: &DVector<f64>, what: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what })
    }
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F>(mut f: F, x: &DVector<f64>, scale: f64) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let step = fd_step(scale, max_norm(x));
    let mut grad = DVector::zeros(x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        probe[j] = x[j] + step;
        let up = f(&probe)?;
        probe[j] = x[j] - step;
        let down = f(&probe)?;
        probe[j] = x[j];
        grad[j] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}

/// Central-difference Jacobian of a vector function with `m` outputs.
pub fn fd_jacobian<F>(mut f: F, x: &DVector<f64>, m: usize, scale: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let step = fd_step(scale, max_norm(x));
    let mut jac = DMatrix::zeros(m, x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        probe[j] = x[j] + step;
        let up = f(&probe)?;
        probe[j] = x[j] - step;
        let down = f(&probe)?;
        probe[j] = x[j];
        Error::check_dim(m, up.len())?;
        jac.set_column(j, &((up - down) / (2.0 * step)));
    }
    Ok(jac)
}

/// Central-difference derivative of a scalar function of one variable.
pub fn fd_derivative<F>(mut f: F, x: f64, scale: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let step = fd_step(scale, x.abs());
    Ok((f(x + step)? - f(x - step)?) / (2.0 * step))
}

pub fn solve(matrix: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let sol = matrix.lu().solve(rhs).ok_or(Error::SingularJacobian)?;
    if sol.iter().all(|v| v.is_finite()) {
        Ok(sol)
    } else {
        Err(Error::SingularJacobian)
    }
}

pub fn solve_matrix(matrix: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sol = matrix.lu().solve(rhs).ok_or(Error::SingularJacobian)?;
    if sol.iter().all(|v| v.is_finite()) {
        Ok(sol)
    } else {
        Err(Error::SingularJacobian)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
}

impl NewtonOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self { tol, max_iter, max_backtracks: 20 }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Newton's method with a halving line search on the residual norm.
///
/// Once the tolerance is met a single extra step is attempted and kept only if it
/// lowers the residual, so nested solves return values at roundoff level rather
/// than just under the threshold.
pub fn newton<F, J>(
    mut residual: F,
    mut jacobian: J,
    x0: DVector<f64>,
    opts: NewtonOptions,
) -> Result<NewtonOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    J: FnMut(&DVector<f64>, &DVector<f64>) -> Result<DMatrix<f64>>,
{
    let mut x = x0;
    let mut fx = residual(&x)?;
    ensure_finite(&fx, "Newton residual")?;
    let mut norm = fx.norm();
    let mut iterations = 0;

    loop {
        let converged = norm <= opts.tol;
        if iterations >= opts.max_iter && !converged {
            return Err(Error::NewtonNoConvergence { iterations, residual: norm });
        }
        if norm == 0.0 {
            break;
        }
        let jac = jacobian(&x, &fx)?;
        let dx = match solve(jac, &(-&fx)) {
            Ok(dx) => dx,
            Err(_) if converged => break,
            Err(e) => return Err(e),
        };
        iterations += 1;

        if converged {
            // polishing step
            let candidate = &x + &dx;
            if let Ok(fc) = residual(&candidate) {
                let nc = fc.norm();
                if nc.is_finite() && nc <= norm {
                    x = candidate;
                    norm = nc;
                }
            }
            break;
        }

        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_backtracks {
            let candidate = &x + &dx * lambda;
            match residual(&candidate) {
                Ok(fc) => {
                    let nc = fc.norm();
                    if nc.is_finite() && nc < norm {
                        x = candidate;
                        fx = fc;
                        norm = nc;
                        accepted = true;
                        break;
                    }
                }
                Err(Error::NewtonNoConvergence { .. })
                | Err(Error::SingularJacobian)
                | Err(Error::NonFinite { .. })
                | Err(Error::NoConvergence { .. })
                | Err(Error::SingularMassMatrix { .. }) => {}
                Err(e) => return Err(e),
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonNoConvergence { iterations, residual: norm });
        }
    }

    Ok(NewtonOutcome { x, residual_norm: norm, iterations })
}

/// Newton's method using a central-difference Jacobian of the residual.
pub fn newton_fd<F>(
    mut residual: F,
    x0: DVector<f64>,
    opts: NewtonOptions,
    fd_scale: f64,
) -> Result<NewtonOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let cell = std::cell::RefCell::new(&mut residual);
    newton(
        |x| (cell.borrow_mut())(x),
        |x, fx| fd_jacobian(|p| (cell.borrow_mut())(p), x, fx.len(), fd_scale),
        x0,
        opts,
    )
}
