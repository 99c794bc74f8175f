//! Reverse-mode differentiation over `[channels, length]` arrays, plus the
//! Adam optimizer and the tensor checkpoint container.

pub mod adam;
pub mod checkpoint;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
