//! Batch classification over the golden model or the simulator, fanned out
//! across worker threads. Each worker owns its own simulator.

use rayon::prelude::*;
use scgnn_core::cycles::RequantConvention;
use scgnn_core::qnn::infer_window;
use scgnn_core::{Logits, PackedModel};
use scgnn_sim::SimMachine;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::Prediction;
use crate::reference::InputQuantization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Golden,
    Sim,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowResult {
    pub logits: Vec<i32>,
    /// Simulated cycles; absent on the golden backend.
    pub cycles: Option<u64>,
}

/// Classifies every window in order.
pub fn run_windows(
    model: &PackedModel,
    windows: &[Vec<f32>],
    input: &InputQuantization,
    backend: Backend,
    convention: RequantConvention,
) -> Result<Vec<WindowResult>> {
    match backend {
        Backend::Golden => {
            let net = model.network();
            let weights = model.weight_set();
            windows
                .par_iter()
                .map(|w| {
                    let q = input.quantize(w)?;
                    let inf = infer_window(&net, &weights, &q)?;
                    Ok(WindowResult { logits: inf.logits.values, cycles: None })
                })
                .collect()
        }
        Backend::Sim => windows
            .par_iter()
            .map_init(
                || {
                    let mut m = SimMachine::new(convention);
                    m.load_model(model).map(|_| m)
                },
                |machine, w| {
                    let machine = machine.as_mut().map_err(|e| scgnn_sim::SimError::Load(e.to_string()))?;
                    let q = input.quantize(w)?;
                    machine.load_input(&q)?;
                    let r = machine.run_inference()?;
                    Ok(WindowResult { logits: r.logits.values, cycles: Some(r.cycles) })
                },
            )
            .collect(),
    }
}

pub fn predictions(results: &[WindowResult], logit_scale: f64) -> Vec<Prediction> {
    results.iter().map(|r| Prediction::from_logits(&r.logits, logit_scale)).collect()
}

pub fn to_logits(results: &[WindowResult]) -> Vec<Logits> {
    results.iter().map(|r| Logits::new(r.logits.clone())).collect()
}
