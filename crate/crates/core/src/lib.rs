//! Weighted-reservoir augmented training for online linear classifiers.
//!
//! Passive-aggressive learners spend long stretches without updating. Each weight vector that
//! survives such a stretch is offered to a fixed-size reservoir, keyed on how long it survived,
//! and the reservoir average is used for prediction.

pub mod cli;
pub mod data_io;
pub mod driver;
pub mod ensemble;
pub mod error;
pub mod learners;
pub mod metrics;
pub mod reservoir;
pub mod sparse;

pub use data_io::{Dataset, Example, LibsvmReader, SynthConfig};
pub use driver::{run, run_baseline, run_wat, run_wat_pseudo_passive, EnsembleSpec, RunConfig, RunTrace};
pub use ensemble::Averaging;
pub use error::{Result, WatError};
pub use learners::{LearnerConfig, LearnerKind, OnlineLearner};
pub use reservoir::{Reservoir, Weighting};
pub use sparse::{Label, SparseVector, WeightVector};
