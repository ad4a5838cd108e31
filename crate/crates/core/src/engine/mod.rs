//! Learning engine: matrices, reverse-mode differentiation, loss,
//! optimizer, checkpoints and the training loop.

mod checkpoint;
mod gradcheck;
mod loss;
mod matrix;
mod optim;
mod params;
mod tape;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, ManifestEntry};
pub use gradcheck::{grad_check, relative_error, GradCheckEntry, GradCheckReport, FD_STEP, REL_FLOOR};
pub use loss::{cross_entropy, mean_cross_entropy, softmax};
pub use matrix::{gemm, Matrix};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tape::{gelu, sigmoid, Backprop, Tape, Var, LAYER_NORM_EPS};
pub use train::{
    evaluate, fit, split_dataset, EpochRecord, Evaluation, FitOutcome, Split, TrainConfig, Trainable, TrainingHistory,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("dataset has {0} samples, at least 10 are needed for a train/val/test split")]
    TooFewSamples(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid model input: {0}")]
    Input(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
