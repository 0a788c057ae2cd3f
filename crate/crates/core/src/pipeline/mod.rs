//! Train / evaluate / predict orchestration on top of the algorithm
//! modules, plus batch digitization.

mod config;
mod digitize;
mod features;
mod infer;
mod train;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::checkpoint::CheckpointError;
use crate::autodiff::AutodiffError;
use crate::cwt::CwtError;
use crate::eval::EvalError;
use crate::ingest::IngestError;
use crate::models::ModelError;
use crate::preprocess::PreprocessError;
use crate::sampler::SamplerError;

pub use config::{BranchCount, CwtSettings, DataSettings, RunConfig, TrainSettings};
pub use digitize::{digitize_dir, DigitizeOptions, DigitizeRow, DigitizeSummary};
pub use features::{extract_features, load_records, preprocess_record, scalogram_image, FeatureSet};
pub use infer::{evaluate, load_model, predict, CheckpointHeader, LoadedModel, Prediction};
pub use train::{train, RunArtifacts, TrainOutcome};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Cwt(#[from] CwtError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Internal,
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            Self::Config(_) => ErrorClass::Config,
            Self::Model(ModelError::InvalidConfig(_)) => ErrorClass::Config,
            Self::Data(_)
            | Self::ArchitectureMismatch(_)
            | Self::Io { .. }
            | Self::Ingest(_)
            | Self::Preprocess(PreprocessError::TooShort { .. })
            | Self::Sampler(_)
            | Self::Checkpoint(_)
            | Self::Eval(_) => ErrorClass::Data,
            Self::Cwt(CwtError::Io(_) | CwtError::Malformed(_)) => ErrorClass::Data,
            Self::Cwt(_) | Self::Preprocess(_) => ErrorClass::Config,
            Self::Model(_) | Self::Autodiff(_) => ErrorClass::Internal,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) fn io_error(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[cfg(test)]
mod tests;
