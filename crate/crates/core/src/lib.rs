//! Golden integer-only model of the SCG phase-classification CNN, the tools
//! that turn a trained floating-point model into a deployable weight image,
//! and the analytical cycle model of the FPGA accelerator.

pub mod cycles;
pub mod error;
pub mod model;
pub mod qnn;
pub mod random;

pub use error::{Error, Result};
pub use model::{PackedModel, SramImage, WeightAddress};
pub use qnn::{
    Activation, Inference, LayerKind, LayerSpec, LayerWeights, Logits, NetworkSpec, PoolMode,
    QuantTensor, RequantParams, WeightSet,
};
