//! Logical location regression: feature construction, self-attention
//! encoding, the cascading base + stacking regressors, consistency losses,
//! training, inference and gradient verification.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod tape;
pub mod train;

use thiserror::Error;

pub use loss::{loss_inter, loss_intra, loss_log, total_loss, LossFlags};
pub use model::{
    infer, position_embedding, round_logits, CellGeometry, RegressorConfig, RegressorParams,
};
pub use train::{grad_check, train, EpochRecord, GradCheckReport, TrainResult};

#[derive(Debug, Error)]
pub enum RegressorError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("cell {cell} has no spatial quad")]
    MissingQuad { cell: usize },
    #[error("empty input: at least one cell is required")]
    EmptyInput,
    #[error("prediction rows ({predictions}) do not match ground truth ({ground_truth})")]
    LengthMismatch { predictions: usize, ground_truth: usize },
    #[error("pair index {index} out of range for {len} cells")]
    Index { index: usize, len: usize },
    #[error("non-finite loss at epoch {epoch}, table {table}: {value}")]
    NonFiniteLoss { epoch: usize, table: usize, value: f64 },
    #[error("invalid training grid: {0}")]
    InvalidGrid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
