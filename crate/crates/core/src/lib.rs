//! Simulation, score matching and bridge sampling for hypoelliptic diffusions
//! on step-2 sub-Riemannian manifolds, with the Heisenberg group as the
//! worked example.

pub mod bridge;
pub mod config;
pub mod error;
pub mod geometry;
pub mod heisenberg;
pub mod levy;
pub mod loss;
pub mod net;
pub mod rng;
pub mod score;
pub mod sim;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
