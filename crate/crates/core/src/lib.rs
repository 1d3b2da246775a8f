//! Certifiably correct SE(d) synchronization.
//!
//! Pose-graph estimates are computed by solving a low-rank Riemannian
//! reformulation of a semidefinite relaxation of the maximum-likelihood
//! problem (the Riemannian Staircase), rounding the result to SO(d)ⁿ, and
//! recovering translations in closed form. A dual certificate reports whether
//! the returned estimate is globally optimal.

pub mod data_matrices;
pub mod error;
pub mod experiments;
pub mod g2o;
pub mod geometry;
pub mod graph;
pub mod lanczos;
pub mod objective;
pub mod pipeline;
pub mod rounding;
pub mod rtr;
pub mod sparse;
pub mod staircase;
pub mod stiefel;

pub use error::{Error, Result};
