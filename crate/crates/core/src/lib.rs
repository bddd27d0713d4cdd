//! Online active learning over batches of noisily labeled data.
//!
//! Each arriving batch is filtered by a quality model (the classifier from the
//! previous batch), the most uncertain suspected-noisy samples are relabeled by
//! a budget-limited oracle, and the classifier is retrained once per batch with
//! a holdout-based rollback guard.

pub mod budget;
pub mod classifier;
pub mod config;
pub mod data;
pub mod engine;
pub mod experiment;
pub mod report;
pub mod seeds;
pub mod stream;
pub mod uncertainty;

pub use budget::{BudgetState, QueryPolicy};
pub use classifier::{ClassifierModel, TrainingHyperparams};
pub use config::{parse_config, parse_sweep, ExperimentConfig};
pub use engine::{run_experiment, BatchOutcome, EngineConfig, Learner, RunMode};
pub use stream::{make_stream, Batch, Dataset, Sample, StreamLayout, StreamParams};
pub use uncertainty::UncertaintyMetric;
