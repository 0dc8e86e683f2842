use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerances and iteration caps shared by every solver in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Relative finite-difference step; the absolute step is `fd_step_scale * max(1, |x|)`.
    pub fd_step_scale: f64,
    pub quad_tol: f64,
    pub ode_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            newton_tol: 1e-12,
            newton_max_iter: 50,
            fd_step_scale: f64::EPSILON.cbrt(),
            quad_tol: 1e-12,
            ode_tol: 1e-12,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("newton_tol", self.newton_tol),
            ("fd_step_scale", self.fd_step_scale),
            ("quad_tol", self.quad_tol),
            ("ode_tol", self.ode_tol),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {value}")));
            }
        }
        if self.newton_max_iter == 0 {
            return Err(Error::InvalidArgument("newton_max_iter must be at least 1".into()));
        }
        Ok(())
    }

    /// Largest of the three solver tolerances.
    pub fn max_tolerance(&self) -> f64 {
        self.newton_tol.max(self.quad_tol).max(self.ode_tol)
    }
}

/// Thresholds used to decide whether the second fiber derivative is usable as a mass matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityThresholds {
    pub min_abs_det: f64,
    pub max_condition: f64,
}

impl Default for RegularityThresholds {
    fn default() -> Self {
        Self { min_abs_det: 1e-10, max_condition: 1e10 }
    }
}
