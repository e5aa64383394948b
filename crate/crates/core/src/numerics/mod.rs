//! Dense-array computation kernel with reverse-mode differentiation.
//!
//! Everything the model does numerically goes through [`Tape`]: forward
//! evaluation records an operation graph, [`Tape::backward`] walks it in
//! reverse applying the chain rule. Training runs at single precision;
//! gradient verification instantiates the same generic code at double
//! precision and compares against central finite differences
//! ([`grad_check`]).

mod checkpoint;
mod gradcheck;
mod optim;
mod real;
mod store;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, TensorEntry};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{clip_grad_norm, AdamW, LrMap};
pub use real::Real;
pub use store::{Init, ParamId, ParamStore};
pub use tape::{Reduction, Tape, Var};
pub use tensor::Tensor;
