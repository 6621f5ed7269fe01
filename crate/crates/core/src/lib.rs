//! Numerical laboratory for backward doubly stochastic differential
//! equations driven by a Brownian motion, a time-reversed Gaussian white
//! noise and time-reversed Poisson random measures.

pub mod calculus;
pub mod coefficients;
pub mod comparison;
pub mod drivers;
pub mod envelope;
pub mod error;
pub mod markspace;
pub mod solver;

pub use error::{BdsdeError, Result};
