//! A 1D residual convolutional network for classifying single-channel EEG
//! segments, trained from scratch with reverse-mode gradients.
//!
//! Two jobs are supported: healthy (Z, O) against ictal (S) recordings, and
//! all five recording states (Z, O, N, D, S). The crate covers the full
//! pipeline: CSV ingestion, stratified 76/12/12 splitting, standardisation,
//! training with best-validation-loss checkpointing, per-class reports, and
//! a `train` / `eval` / `predict` command line.

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use baselines::{build_baseline, Architecture, BaselineKind};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use data::{Dataset, Job, SplitSpec};
pub use error::{Error, Result};
pub use metrics::{classification_report, ClassificationReport, ConfusionMatrix};
pub use model::{build_proposed_model, GradientSet, LayerSpec, Model, SIGNAL_LENGTH};
pub use tensor::Tensor;
pub use training::{evaluate, fit, TrainConfig, TrainReport};
