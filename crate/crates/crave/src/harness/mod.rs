//! Dataset manifests, the training loop, k-fold evaluation, zero-shot
//! generator ranking and the command-line interface.

pub mod cli;
pub mod manifest;
pub mod train;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("duplicate video id {0}")]
    DuplicateId(String),
    #[error("missing field: {0}")]
    MissingField(String),
    #[error("record {0} has no MOS")]
    MissingMos(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("record {0} has no generator label")]
    NoLabels(String),
    #[error("need at least {needed} items, got {got}")]
    TooFewItems { needed: usize, got: usize },
    #[error(transparent)]
    Video(#[from] crate::video::VideoError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error(transparent)]
    Loss(#[from] crate::objective::LossError),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
    #[error(transparent)]
    Study(#[from] crate::study::StudyError),
    #[error(transparent)]
    Text(#[from] crate::text::TextError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
