//! Lattice gases with quenched site disorder: exact finite-volume Gibbs
//! measures, rate families and kinetic Monte Carlo, canonical-sector spectral
//! analysis, truncated Green-Kubo diffusion matrices, a nonlinear diffusion
//! solver with a particle comparison harness, and disorder-fluctuation
//! observables.

pub mod cli;
pub mod disorder;
pub mod dynamics;
pub mod error;
pub mod gibbs;
pub mod greenkubo;
pub mod hydro;
pub mod lattice;
pub mod linalg;
pub mod numerics;
pub mod observables;
pub mod partition;
pub mod scalar;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Rates = dynamics::RateFamily<f64>;
pub type CustomRateTable = dynamics::CustomRates<f64>;
pub type Interpolant = numerics::MonotoneCubic<f64>;
