//! Learning half of the stroke-order pipeline: a small reverse-mode autodiff
//! engine, the CNN + BiLSTM encoder / LSTM decoder model, Adam, checkpoints
//! and the training loop.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod params;
pub mod recover;
pub mod rnn;
pub mod scalar;
pub mod trainer;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Gradients, Graph, Mode, Var};
pub use model::{CnnConfig, ModelConfig, Seq2SeqConfig};
pub use params::{ParameterStore, Tensor};
pub use recover::ModelRecoverer;
pub use trainer::{evaluate_loss, train, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by {0}")]
    NonFiniteValue(&'static str),
    #[error("loss does not depend on any tracked value")]
    NoTape,
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("duplicate parameter name {0:?}")]
    DuplicateName(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
