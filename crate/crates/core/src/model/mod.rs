//! The four feature-extraction branches and the fusion network.
//!
//! Layer order everywhere is `linear → batch norm → ReLU → dropout`. Layers
//! followed by batch norm carry no bias of their own; the batch-norm shift
//! plays that role.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod layout;
pub mod network;
pub mod params;

pub use config::{Branch, BranchSet, DropoutConfig, ModelConfig};
pub use forward::Ctx;
pub use network::{argmax, Model, Prediction, SampleInput};
pub use params::{Param, ParamKind, ParamStore};
