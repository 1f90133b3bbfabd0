//! CPU inference for the RepViT family of lightweight CNNs.
//!
//! Models are built from a [`ModelConfig`], run in train form (multi-branch
//! depthwise token mixers, explicit batch norms) and can be converted once
//! into fused form, where every re-parameterizable layer is a single
//! depthwise convolution and every batch norm is folded into its conv.

pub mod bench;
pub mod blocks;
pub mod cli;
pub mod error;
pub mod model;
pub mod params;
pub mod reparam;
pub mod tensor;
pub mod weights_io;
mod wire;

pub use error::{Error, Result};
pub use model::{analyze, build, CostReport, Form, Init, Model, ModelConfig};
pub use params::Parameterized;
pub use tensor::{BnParams, ConvSpec, Tensor};
