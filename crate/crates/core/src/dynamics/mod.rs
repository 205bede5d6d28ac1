//! Rates, the exchange generator and kinetic Monte Carlo.

pub mod generator;
pub mod kmc;
pub mod rates;

pub use generator::{apply_generator, bond_rate, current, gradient_residual, reversibility_defect};
pub use kmc::{read_snapshot, write_snapshot, DynState, Observer, RunStats, SnapshotHeader, SumTree, TrajectoryCsv};
pub use rates::{CustomRates, RateFamily, Violation, ViolationKind};
