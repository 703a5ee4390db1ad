//! Semi-Lagrangian actor-critic training for minimum-cost-to-target control
//! problems, with grid reference solutions and rollout tooling.
//!
//! Values are handled in the transformed form `W = 1 - exp(-V)`, which keeps
//! them in `[0, 1]` even where the target cannot be reached.

pub mod actor_critic;
pub mod error;
pub mod evaluate;
pub mod exec;
mod fsutil;
pub mod grid;
pub mod nn;
pub mod ocp;
pub mod policy;
pub mod raster;
pub mod rollout;
pub mod sl;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use fsutil::write_atomic;
