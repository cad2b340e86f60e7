//! Damped quantum harmonic oscillator: exact spectral relaxation, moment
//! hierarchy and distance-to-equilibrium diagnostics.

pub mod analysis;
mod dd;
pub mod error;
pub mod evolve;
pub mod generator;
pub mod model;
pub mod moments;
pub mod ode;
mod par;
pub mod scenario;
pub mod spectral;
pub mod tridiag;

pub use error::{Error, Result};
pub use par::is_parallel;
