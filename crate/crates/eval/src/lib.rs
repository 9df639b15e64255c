//! Synthetic SCG windows, classification metrics and a constructed
//! reference classifier for the integer CNN.

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod reference;
pub mod runner;
pub mod synth;

pub use error::{EvalError, Result};
pub use metrics::{evaluate, EvalSummary, Prediction};
pub use reference::{build_reference_model, float_forward, InputQuantization, ReferenceConfig, ReferenceModel};
pub use runner::{run_windows, Backend, WindowResult};
pub use synth::{synth_windows, LabeledWindowSet, Phase, SynthConfig};
