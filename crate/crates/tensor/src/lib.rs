//! Minimal dense tensors with tape-based reverse-mode automatic differentiation.
//!
//! Everything on the tape is a row-major matrix; vectors are `1 x n` rows and
//! scalars are `1 x 1`. The op set is the one needed by an attention encoder /
//! pointer decoder: matrix products, row-wise normalizations, gated
//! activations, masked softmax and a few sparse attention maps.

mod error;
pub mod kernels;
pub mod nn;
pub mod ops;
mod param;
mod real;
mod tape;
mod tensor;

pub use error::TensorError;
pub use param::{read_checkpoint, write_checkpoint, ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use real::Real;
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
