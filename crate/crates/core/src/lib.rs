//! Forced variational integrators.
//!
//! Continuous forced mechanical systems on ℝⁿ are discretized either on the tangent
//! bundle (a curve family with boundary maps plus discrete Lagrangian and force) or on
//! Q×Q (a discrete Lagrangian with a split discrete force). The two sides are linked by
//! the boundary maps, and both can be stepped with Newton solvers. The `order_lab`
//! module measures one-step errors against a high-accuracy flow oracle and fits
//! convergence slopes.

pub mod disc_qq;
pub mod disc_tq;
pub mod error;
pub mod flow;
pub mod fms;
pub mod numeric;
pub mod order_lab;
pub mod quadrature;
pub mod settings;
pub mod stepper;
pub mod systems;

pub use error::{Error, Result};
pub use flow::{FlowMode, FlowOracle};
pub use fms::{RegularityReport, StateTq, System};
pub use settings::{RegularityThresholds, SolverSettings};
