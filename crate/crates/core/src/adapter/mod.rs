//! Control adapter: learns the user-command gating network from the
//! weights the imitation-trained gating produces, using an adversarial
//! loss over weight vectors plus an L1 reconstruction loss.

mod dataset;
mod gan;

pub use dataset::{collect_dataset, AdapterDataset, AdapterRecord, DatasetManifest, Split};
pub use gan::{d_loss, g_loss, train_adapter, AdapterOutput, AdapterReport, Discriminator, EpochRecord, GanConfig, GanLoss, LOG_CLAMP};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("invalid adapter config: {0}")]
    Config(String),
    #[error("bad dataset: {0}")]
    Dataset(String),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite { what: String, epoch: usize, batch: usize },
    #[error("invariant breach: {0}")]
    FrozenBreach(String),
    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
