//! Atrial-fibrillation detection from single-lead ECG.
//!
//! The crate covers the whole pipeline: loading numeric recordings or
//! digitizing rendered chart strips ([`ingest`]), denoising and windowing
//! ([`preprocess`]), Mexican-hat scalograms ([`cwt`]), a small reverse-mode
//! tensor engine ([`autodiff`]), the residual and 1D convolutional
//! classifiers with their multi-branch head ([`models`]), balanced branch
//! datasets ([`sampler`]), ranking metrics ([`eval`]) and the train /
//! evaluate / predict orchestration used by the command-line tool
//! ([`pipeline`]).

pub mod autodiff;
pub mod cwt;
pub mod eval;
pub mod ingest;
pub mod models;
pub mod pipeline;
pub mod preprocess;
pub mod sampler;
pub mod synth;

pub use autodiff::{AdamConfig, AdamState, Graph, ParamStore, Tensor, Var};
pub use cwt::{Scalogram, ScalogramImage, WaveletConfig};
pub use eval::{EvalReport, ScoredSample};
pub use ingest::{DatasetManifest, EcgRecord, Label, PixelMatrix, TracePointSet};
pub use models::{Classifier, Cnn1dConfig, ModelKind, ResNet18Config};
pub use pipeline::RunConfig;
pub use preprocess::{FilterKind, FilterSpec, StandardizedSignal};
pub use sampler::MbTrainingSet;
