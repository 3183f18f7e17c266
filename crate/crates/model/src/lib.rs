//! Constraint-aware dual-attention policy for multi-variant vehicle routing.
//!
//! The encoder mixes a dense attention branch, which also sees a learned
//! embedding of the active constraints, with a top-k sparse branch. The
//! decoder builds solutions node by node under the environment's masks and
//! is trained with REINFORCE using the mean of several rollouts per
//! instance as baseline.

mod config;
pub mod decoder;
pub mod encoder;
pub mod eval;
mod model;
pub mod optim;
pub mod par;
pub mod params;
pub mod train;

use thiserror::Error;

pub use config::{parse_key_values, ModelConfig, PromptPosition, SparseFunction, TopK};
pub use decoder::{DecodeMode, Rollout, RolloutOptions};
pub use model::{atomic_write, sidecar_path, Model};
pub use par::ExecMode;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint has no parameter `{0}`")]
    MissingParam(String),
    #[error("instance has no customers")]
    Empty,
    #[error("replayed trajectory {0} ended early")]
    Replay(usize),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error(transparent)]
    Tensor(#[from] cada_tensor::TensorError),
    #[error(transparent)]
    Env(#[from] cada_core::EnvError),
    #[error(transparent)]
    Format(#[from] cada_core::format::FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
