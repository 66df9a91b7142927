//! Stochastic analysis on the path space of an embedded Riemannian manifold.

pub mod driverflow;
pub mod error;
pub mod functional;
pub mod geometry;
pub mod lift;
pub mod linalg;
pub mod malliavin;
pub mod montecarlo;
pub mod rng;
pub mod skorohod;
pub mod stats;
pub mod wiener;

pub use error::{Error, Result};
