//! Experiment orchestration: configs, datasets, the training loop with
//! expansion events, FLOP accounting, mixing detection, Pareto analysis,
//! run logs, plots and sweeps.

pub mod config;
pub mod data;
pub mod flops;
pub mod mixing;
pub mod pareto;
pub mod plot;
pub mod runlog;
pub mod sweep;
pub mod train;

use std::path::Path;

use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::convex::TheoryError;
use crate::expansion::ExpansionError;
use crate::model::ModelError;
use crate::optim::OptimError;

pub use config::{EventConfig, ExperimentConfig, MixingConfig, Precision, ScheduleSection, TrainingSection};
pub use data::{generate_dataset, validation_batches, DataSpec, Dataset, MarkovChain, Sampler};
pub use flops::{flops_per_step, staged_flops, staged_ratio};
pub use mixing::{detect_mixing, plan_expansion_timing, MixingReport, TimingAdvice};
pub use pareto::{pareto_frontier, RunPoint};
pub use runlog::{EventRecord, RunLog, RunRecord};
pub use train::{train, train_on, train_typed, TrainOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("loss became non-finite ({loss}) at step {step}")]
    NonFinite { step: u64, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code: 1 for usage/config problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Model(ModelError::InvalidConfig(_)) | HarnessError::Optim(OptimError::InvalidConfig(_)) => 1,
            _ => 2,
        }
    }
}
