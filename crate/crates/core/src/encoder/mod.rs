//! The dual encoder: two LSTM sentence encoders, a concatenation and an MLP
//! head producing a match probability, plus training and checkpoints.

mod checkpoint;
mod model;
mod train;
mod vocab;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, model_digest, model_from_bytes, save_checkpoint,
    FORMAT_VERSION, MAGIC,
};
pub use model::{
    DenseLayer, DualEncoder, GateParams, Hyperparams, LstmParams, Side, EMBEDDING_INIT,
};
pub use train::{
    accuracy_from_probs, dev_accuracy, predict, prepare_examples, train, train_with_progress,
    EpochMetrics, Example, TrainConfig, Trainer,
};
pub use vocab::{Vocabulary, PAD_TOKEN, UNK_TOKEN};

use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("empty token sequence")]
    EmptySequence,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
