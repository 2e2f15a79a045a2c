//! Numerical laboratory for path-dependent PDEs.

pub mod acceptance;
pub mod calculus;
pub mod cli;
pub mod config;
pub mod error;
pub mod expectation;
pub mod measures;
pub mod oracles;
pub mod pathspace;
pub mod rng;
pub mod snell;
pub mod solvers;
pub mod viscosity;

pub use error::{Error, Result};
