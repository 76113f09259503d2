//! Process model, state estimation, and finite-horizon optimal control for
//! width-controlled layer printing of cantilever beams.
//!
//! The library covers the full control stack for building a beam whose tip
//! stiffness must meet a target value:
//!
//! - [`beam`]: deterministic mechanics — bending-influence coefficients,
//!   compliance/stiffness of a layered beam, and the split predictor used by
//!   the planner;
//! - [`sim`]: a ground-truth stochastic simulator of deposition and stiffness
//!   probing with reproducible counter-based noise;
//! - [`estimator`]: a growing-state recursive filter over the transformed
//!   layer state;
//! - [`planner`]: the convex finite-horizon width planner with a log-barrier
//!   interior-point solver and an exhaustive grid oracle;
//! - [`calibration`]: parameter identification from constant-width specimens.

pub mod beam;
pub mod calibration;
pub mod error;
pub mod estimator;
pub mod planner;
pub mod sim;

pub use beam::{Geometry, ModelParams};
pub use error::{Error, Result};
