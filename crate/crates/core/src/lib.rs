//! Simulation laboratory for recommendation mechanisms that incentivize
//! compliance and estimate treatment effects by instrumental-variable
//! regression.

pub mod agents;
pub mod compliance;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod mechanism;
pub mod stats;

pub use error::{Error, Result};
pub use estimator::{EstimateWithBound, Record, SampleSet};
pub use harness::{ExperimentSpec, Preset, ResultTable, TableMetadata};
pub use mechanism::{Policy, PolicyConfig, PolicyMode, TrajectoryLog, World};
pub use stats::RngSeed;
