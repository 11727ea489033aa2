//! Character-level transformer encoder with a multi-label sigmoid head.
//!
//! The network is written directly on `ndarray` with a hand-derived backward
//! pass; there is no tape. Everything is generic over [`Scalar`] so the same
//! code runs in `f32` for training and `f64` for gradient checking.

mod adam;
mod checkpoint;
mod config;
mod model;
mod params;
pub(crate) mod train;

use thiserror::Error;

pub use adam::Adam;
pub use checkpoint::{
    from_bytes as checkpoint_from_bytes, load_checkpoint, save_checkpoint, to_bytes as checkpoint_bytes, Checkpoint,
    TrainingMeta, CHECKPOINT_VERSION, MAGIC,
};
pub use config::{HashSpec, ModelConfig, TrainConfig, HASH_PRIME};
pub use model::{bce_loss, bce_with_logits, sigmoid, ForwardOutput, Mode, Model, RecordTrace};
pub use params::{LayerParams, Parameters};
pub use train::{
    embed, exact_match_accuracy, finetune, predict, predict_proba, train, train_with_log, EpochLog, Prediction,
    TrainOutcome,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("threshold {0} outside (0,1)")]
    ThresholdOutOfRange(f64),
    #[error("label space mismatch: {0}")]
    LabelSpaceMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Encode(#[from] crate::textenc::EncodeError),
}

/// Floating-point element type of the network.
pub trait Scalar:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + std::iter::Sum
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn lit(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn lit(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}
