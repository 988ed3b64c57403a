//! Shared image–text embedding space: toy encoders, contrastive objectives
//! with analytic gradients, and the training loop that fine-tunes only the
//! aerial encoder.

mod detection;
mod encoder;
mod gradcheck;
mod gradsuite;
mod loss;
mod optim;
mod provider;
mod synthetic;
mod train;

use thiserror::Error;

pub use detection::{detection_set_loss, DetTarget, DetectionLoss, DetectionLossConfig, Prediction};
pub use encoder::{EncoderGrads, EncoderKind, EncoderParams};
pub use gradcheck::{finite_diff_gradcheck, relative_error, GradCheck};
pub use gradsuite::{run_gradcheck_suite, LossKind, SuiteConfig, SuiteRow};
pub use loss::{
    bag_prototypes, classification_loss, cross_view_loss, l2_normalize, mil_nce_loss,
    symmetric_cross_view_loss, total_loss, AlignmentBatch, DetectionInputs, Embedding,
    LossBreakdown, LossConfig, LossOutput, LossWeights, SimilarityMode, TotalLoss,
};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use provider::{EmbeddingProvider, FeatureTable, SyntheticConfig, SyntheticWorld, FEATURES_FORMAT};
pub use synthetic::{cross_view_recall, synthetic_bags, synthetic_records};
pub use train::{
    read_checkpoint, read_trace_csv, write_checkpoint, write_trace_csv, Checkpoint, TraceRow,
    TrainConfig, TrainState, Trainer, CHECKPOINT_FORMAT,
};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("aerial batch has {aerial} rows but ground batch has {ground}")]
    BatchMismatch { aerial: usize, ground: usize },
    #[error("sample {sample}: no positive bag")]
    EmptyPositives { sample: usize },
    #[error("sample {sample}: positive bag {bag} is not among the batch candidates")]
    PositiveNotCandidate { sample: usize, bag: usize },
    #[error("label {label} at index {index} out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step} (batch pairs: {pair_ids})")]
    NonFiniteLoss { step: u64, pair_ids: String },
    #[error("no text bag for category {0}")]
    MissingBag(u32),
    #[error("embedding provider: {0}")]
    Provider(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Format(#[from] crate::io::FormatError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}
