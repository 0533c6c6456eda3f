//! Distributed constrained convex optimization by smooth primal-dual
//! dynamics with phase-lead compensation, over networks whose links may
//! carry unknown constant delays.
//!
//! The crate is organized bottom-up:
//! - [`graph`]: undirected weighted networks and Laplacians.
//! - [`problem`]: local convex programs, the generalized Lagrangian, KKT residuals.
//! - [`dynamics`]: per-agent compensated primal-dual vector field and Euler step.
//! - [`scattering`]: wave-variable channels and delay lines.
//! - [`engine`]: synchronous simulation, trajectory logs, Lyapunov and passivity diagnostics.
//! - [`matching`]: the robot/target assignment benchmark and its permutation oracle.
//! - [`cli`]: configuration schema and the scenario runner behind the binary.

// `!(x > 0.0)` is used on purpose throughout so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod graph;
pub mod matching;
pub mod problem;
pub mod scattering;

pub use error::{Error, Result};
