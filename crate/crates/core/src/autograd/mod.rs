//! Reverse-mode automatic differentiation over dense `f64` tensors.

pub mod adam;
pub mod gradcheck;
pub mod init;
pub mod ops;
pub mod suite;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{BatchNormMode, BatchStats, Padding};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
