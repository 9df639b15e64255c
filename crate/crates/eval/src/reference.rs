//! Floating-point forward pass and a reference classifier built by
//! construction: a matched-filter first layer, identity middle layers and a
//! logistic-regression head fitted on calibration windows.

use scgnn_core::model::{fold_batchnorm, quantize_model, FloatLayer, FloatLayerParams, FloatModel};
use rayon::prelude::*;
use scgnn_core::qnn::{infer_window, zscore_quantize};
use scgnn_core::{LayerKind, NetworkSpec, PackedModel, PoolMode, QuantTensor, WeightSet};
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::synth::{synth_windows, LabeledWindowSet, SynthConfig, FS_HZ, NUM_CLASSES, WINDOW};

/// Window normalization applied before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputQuantization {
    pub zero_point: u8,
    /// Standard deviations per quantization step.
    pub scale_divisor: f64,
}

impl Default for InputQuantization {
    fn default() -> Self {
        Self { zero_point: 128, scale_divisor: 1.0 / 16.0 }
    }
}

impl InputQuantization {
    pub fn quantize(&self, window: &[f32]) -> Result<QuantTensor> {
        Ok(zscore_quantize(window, self.zero_point, self.scale_divisor)?)
    }

    pub fn dequantize(&self, q: &QuantTensor) -> Vec<f64> {
        q.data()
            .iter()
            .map(|&v| (v as f64 - self.zero_point as f64) * self.scale_divisor)
            .collect()
    }
}

/// Activations of every layer, channel-major, plus the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatOutputs {
    pub activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

fn conv_same(x: &[f64], c_in: usize, len: usize, p: &FloatLayerParams) -> Vec<f64> {
    let pad = p.kernel.saturating_sub(1) / 2;
    let w_out = len + 2 * pad + 1 - p.kernel;
    let mut out = vec![0.0; p.c_out * w_out];
    for o in 0..p.c_out {
        let row = &mut out[o * w_out..(o + 1) * w_out];
        row.iter_mut().for_each(|v| *v = p.bias[o]);
        for c in 0..c_in {
            for k in 0..p.kernel {
                let w = p.weights[(o * c_in + c) * p.kernel + k];
                if w == 0.0 {
                    continue;
                }
                for (t, acc) in row.iter_mut().enumerate() {
                    if let Some(i) = (t + k).checked_sub(pad).filter(|&i| i < len) {
                        *acc += w * x[c * len + i];
                    }
                }
            }
        }
    }
    out
}

fn pool(x: Vec<f64>, channels: usize, len: usize, mode: PoolMode) -> (Vec<f64>, usize) {
    match mode {
        PoolMode::Bypass => (x, len),
        PoolMode::MaxPool2 => {
            let half = len / 2;
            let mut out = Vec::with_capacity(channels * half);
            for c in 0..channels {
                for t in 0..half {
                    out.push(x[c * len + 2 * t].max(x[c * len + 2 * t + 1]));
                }
            }
            (out, half)
        }
        PoolMode::GlobalAvgPool => {
            let out = (0..channels)
                .map(|c| x[c * len..(c + 1) * len].iter().sum::<f64>() / len as f64)
                .collect();
            (out, 1)
        }
    }
}

/// Real-valued reference of what the quantized network computes: same
/// padding, pooling before the ReLU, no saturation.
pub fn float_forward(model: &FloatModel, input: &[f64]) -> Result<FloatOutputs> {
    let first = model.layers.first().ok_or_else(|| EvalError::Shape("model has no layers".into()))?;
    let mut channels = first.params.c_in;
    if input.len() != channels * model.input_length {
        return Err(EvalError::Shape(format!(
            "model expects {} input samples, got {}",
            channels * model.input_length,
            input.len()
        )));
    }
    let mut len = model.input_length;
    let mut x = input.to_vec();
    let mut activations = Vec::new();
    let n = model.layers.len();
    for (i, layer) in model.layers.iter().enumerate() {
        let p = match layer.params.bn {
            Some(_) => fold_batchnorm(&layer.params)?,
            None => layer.params.clone(),
        };
        if p.c_in != channels {
            return Err(EvalError::Shape(format!("layer {i} expects {} channels, got {channels}", p.c_in)));
        }
        let (y, out_len) = match layer.kind {
            LayerKind::Conv1d => {
                let acc = conv_same(&x, channels, len, &p);
                let w_out = acc.len() / p.c_out;
                pool(acc, p.c_out, w_out, layer.pool_mode)
            }
            LayerKind::FullyConnected => {
                let flat = channels * len;
                if flat != p.c_in {
                    return Err(EvalError::Shape(format!(
                        "fully connected layer {i} expects {} inputs, got {flat}",
                        p.c_in
                    )));
                }
                let y = (0..p.c_out)
                    .map(|o| p.bias[o] + (0..flat).map(|j| p.weights[o * flat + j] * x[j]).sum::<f64>())
                    .collect();
                (y, 1)
            }
        };
        channels = p.c_out;
        len = out_len;
        if i + 1 == n {
            return Ok(FloatOutputs { activations, logits: y });
        }
        x = y.into_iter().map(|v| v.max(0.0)).collect();
        activations.push(x.clone());
    }
    unreachable!("loop returns on the last layer")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub calibration: SynthConfig,
    /// The calibration set is generated once per noise level and pooled.
    pub calibration_noise: Vec<f64>,
    pub input: InputQuantization,
    /// Real value of one logit step; logits then read as log-likelihoods.
    pub logit_scale: f64,
    /// Output channels of the layer before the classifier.
    pub feature_width: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            calibration: SynthConfig { n: 600, seed: 0x5eed, ..SynthConfig::default() },
            calibration_noise: vec![0.0, 0.05, 0.1, 0.2, 0.3],
            input: InputQuantization::default(),
            logit_scale: 1.0 / 256.0,
            feature_width: 128,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceModel {
    pub float: FloatModel,
    pub net: NetworkSpec,
    pub weights: WeightSet,
    pub packed: PackedModel,
    pub input: InputQuantization,
    pub logit_scale: f64,
}

const BANK_KERNEL: usize = 9;
/// Centre frequencies of the first-layer filter quadruples; 0 Hz pairs a
/// smoothing kernel with a slope kernel.
pub const BANDS_HZ: [f64; 4] = [0.0, 90.0, 200.0, 300.0];
const BANK_CHANNELS: usize = 4 * BANDS_HZ.len();
/// Band pairs `(a, b)` whose envelope difference `a - b` feeds a channel.
const CONTRASTS: [(usize, usize); 8] = [(2, 0), (2, 1), (1, 2), (0, 2), (1, 3), (3, 1), (2, 3), (3, 2)];
const ENVELOPES: usize = BANDS_HZ.len() + CONTRASTS.len();
/// Calibration quantiles of each envelope used as detection thresholds.
const THRESHOLD_QUANTILES: [f64; 3] = [0.75, 0.92, 0.98];
const LOGISTIC_STEPS: usize = 1500;
const FEATURES: usize = ENVELOPES * (1 + THRESHOLD_QUANTILES.len());

/// Hann-windowed cosine and sine kernels per band and their negations, so
/// that the rectified outputs of a quadruple sum to an envelope.
pub fn matched_filter_bank() -> FloatLayerParams {
    use std::f64::consts::PI;
    let k = BANK_KERNEL;
    let hann: Vec<f64> = (0..k).map(|i| (PI * (i + 1) as f64 / (k + 1) as f64).sin().powi(2)).collect();
    let kernel = |f: f64, quadrature: bool| -> Vec<f64> {
        let v: Vec<f64> = (0..k)
            .map(|i| {
                let n = i as f64 - (k / 2) as f64;
                let a = 2.0 * PI * f * n / FS_HZ;
                hann[i] * match (quadrature, f == 0.0) {
                    (false, _) => a.cos(),
                    (true, false) => a.sin(),
                    (true, true) => n,
                }
            })
            .collect();
        // band-pass kernels get no DC response so baseline wander stays out
        let dc = if f == 0.0 { 0.0 } else { v.iter().sum::<f64>() / hann.iter().sum::<f64>() };
        let v: Vec<f64> = v.iter().zip(&hann).map(|(x, h)| x - dc * h).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    };
    let mut weights = Vec::with_capacity(BANK_CHANNELS * k);
    for &f in &BANDS_HZ {
        let (c, q) = (kernel(f, false), kernel(f, true));
        for sign in [1.0, -1.0] {
            weights.extend(c.iter().map(|v| sign * v));
            weights.extend(q.iter().map(|v| sign * v));
        }
    }
    FloatLayerParams { c_in: 1, c_out: BANK_CHANNELS, kernel: k, weights, bias: vec![0.0; BANK_CHANNELS], bn: None }
}

fn zeros(c_in: usize, c_out: usize, kernel: usize) -> FloatLayerParams {
    FloatLayerParams { c_in, c_out, kernel, weights: vec![0.0; c_out * c_in * kernel], bias: vec![0.0; c_out], bn: None }
}

fn set_w(p: &mut FloatLayerParams, o: usize, c: usize, k: usize, v: f64) {
    p.weights[(o * p.c_in + c) * p.kernel + k] = v;
}

/// Band envelopes (moving sums of a rectified quadruple) followed by
/// pairwise envelope differences.
pub fn envelope_layer(c_out: usize) -> FloatLayerParams {
    let k = BANK_KERNEL;
    let mut p = zeros(BANK_CHANNELS, c_out, k);
    let per = 1.0 / (4 * k) as f64;
    for b in 0..BANDS_HZ.len() {
        for c in 4 * b..4 * b + 4 {
            for t in 0..k {
                set_w(&mut p, b, c, t, per);
            }
        }
    }
    for (i, &(a, b)) in CONTRASTS.iter().enumerate() {
        let o = BANDS_HZ.len() + i;
        for j in 0..4 {
            for t in 0..k {
                set_w(&mut p, o, 4 * a + j, t, per);
                set_w(&mut p, o, 4 * b + j, t, -per);
            }
        }
    }
    p
}

/// Each envelope passed through, then once per threshold with the
/// threshold subtracted so the ReLU keeps only the excess.
fn threshold_layer(c_in: usize, c_out: usize, thresholds: &[[f64; 3]]) -> FloatLayerParams {
    let k = BANK_KERNEL;
    let mut p = zeros(c_in, c_out, k);
    for (j, th) in thresholds.iter().enumerate() {
        set_w(&mut p, j, j, k / 2, 1.0);
        for (m, &t) in th.iter().enumerate() {
            let o = ENVELOPES + THRESHOLD_QUANTILES.len() * j + m;
            set_w(&mut p, o, j, k / 2, 1.0);
            p.bias[o] = -t;
        }
    }
    p
}

/// Passes the first `min(c_in, c_out)` channels through unchanged.
fn identity_layer(c_in: usize, c_out: usize, kernel: usize) -> FloatLayerParams {
    let mut p = zeros(c_in, c_out, kernel);
    for c in 0..c_in.min(c_out) {
        set_w(&mut p, c, c, kernel / 2, 1.0);
    }
    p
}

fn layer(kind: LayerKind, pool_mode: PoolMode, params: FloatLayerParams) -> FloatLayer {
    FloatLayer { kind, pool_mode, params, output_scale: 1.0, output_zero_point: 0 }
}

fn calibration_set(cfg: &ReferenceConfig) -> Result<LabeledWindowSet> {
    if cfg.calibration_noise.is_empty() {
        return synth_windows(&cfg.calibration);
    }
    let mut windows = Vec::new();
    let mut labels = Vec::new();
    for (i, &noise) in cfg.calibration_noise.iter().enumerate() {
        let seed = cfg.calibration.seed.wrapping_add(i as u64);
        let part = synth_windows(&SynthConfig { noise, seed, ..cfg.calibration.clone() })?;
        windows.extend(part.windows);
        labels.extend(part.labels);
    }
    LabeledWindowSet::new(windows, labels)
}

/// Activations of layer `stage` for every calibration input.
fn collect(model: &FloatModel, inputs: &[Vec<f64>], stage: usize) -> Result<Vec<Vec<f64>>> {
    inputs
        .par_iter()
        .map(|x| Ok(float_forward(model, x)?.activations.swap_remove(stage)))
        .collect()
}

fn peak(acts: &[Vec<f64>]) -> Result<f64> {
    let m = acts.iter().flatten().copied().fold(0.0, f64::max);
    if m > 0.0 {
        Ok(m)
    } else {
        Err(EvalError::Config("calibration windows produced no activity".into()))
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

/// Builds and quantizes the reference classifier.
pub fn build_reference_model(cfg: &ReferenceConfig) -> Result<ReferenceModel> {
    if cfg.feature_width < FEATURES {
        return Err(EvalError::Config(format!(
            "feature width must be at least {FEATURES}, got {}",
            cfg.feature_width
        )));
    }
    if !(cfg.logit_scale > 0.0 && cfg.logit_scale.is_finite()) {
        return Err(EvalError::Config(format!("logit scale must be positive, got {}", cfg.logit_scale)));
    }
    let calib = calibration_set(cfg)?;
    let inputs: Vec<Vec<f64>> = calib
        .windows
        .iter()
        .map(|w| Ok(cfg.input.dequantize(&cfg.input.quantize(w)?)))
        .collect::<Result<_>>()?;
    let width = cfg.feature_width;
    let mut head = zeros(width, NUM_CLASSES, 1);
    head.weights.iter_mut().for_each(|w| *w = 1.0);
    let mut model = FloatModel {
        input_length: WINDOW,
        input_scale: cfg.input.scale_divisor,
        layers: vec![
            layer(LayerKind::Conv1d, PoolMode::MaxPool2, matched_filter_bank()),
            layer(LayerKind::Conv1d, PoolMode::MaxPool2, envelope_layer(32)),
            layer(LayerKind::Conv1d, PoolMode::MaxPool2, identity_layer(32, 64, BANK_KERNEL)),
            layer(LayerKind::Conv1d, PoolMode::GlobalAvgPool, identity_layer(64, width, 5)),
            layer(LayerKind::FullyConnected, PoolMode::Bypass, head),
        ],
    };

    model.layers[0].output_scale = peak(&collect(&model, &inputs, 0)?)? / 255.0;
    let env = collect(&model, &inputs, 1)?;
    model.layers[1].output_scale = peak(&env)? / 255.0;
    let len = env[0].len() / 32;
    let thresholds: Vec<[f64; 3]> = (0..ENVELOPES)
        .map(|j| {
            let mut v: Vec<f64> = env.iter().flat_map(|a| a[j * len..(j + 1) * len].iter().copied()).collect();
            v.sort_by(f64::total_cmp);
            std::array::from_fn(|m| quantile(&v, THRESHOLD_QUANTILES[m]))
        })
        .collect();
    drop(env);
    model.layers[2].params = threshold_layer(32, 64, &thresholds);
    model.layers[2].output_scale = peak(&collect(&model, &inputs, 2)?)? / 255.0;
    model.layers[3].output_scale = peak(&collect(&model, &inputs, 3)?)? / 255.0;

    // fit the classifier on the features the integer network actually sees
    let (net, weights) = quantize_model(&model)?;
    let s_feat = model.layers[3].output_scale;
    let features: Vec<Vec<f64>> = calib
        .windows
        .par_iter()
        .map(|w| {
            let inf = infer_window(&net, &weights, &cfg.input.quantize(w)?)?;
            Ok(inf.activations[3].data().iter().map(|&v| v as f64 * s_feat).collect())
        })
        .collect::<Result<_>>()?;
    model.layers[4].params = logistic_head(&features, &calib)?;
    model.layers[4].output_scale = cfg.logit_scale;

    let (net, weights) = quantize_model(&model)?;
    let packed = PackedModel::from_parts(&net, &weights)?;
    Ok(ReferenceModel { float: model, net, weights, packed, input: cfg.input, logit_scale: cfg.logit_scale })
}

/// Multinomial logistic regression on standardized features, fitted by
/// full-batch gradient descent with a small L2 penalty; the standardization
/// is folded back into the weights.
fn logistic_head(features: &[Vec<f64>], set: &LabeledWindowSet) -> Result<FloatLayerParams> {
    let counts = set.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(EvalError::Config(format!("calibration set has no windows of class {c}")));
    }
    let width = features[0].len();
    let n = features.len() as f64;
    let mut mean = vec![0.0; width];
    for f in features {
        mean.iter_mut().zip(f).for_each(|(m, v)| *m += v / n);
    }
    let mut std = vec![0.0; width];
    for f in features {
        std.iter_mut().zip(f.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
    }
    let active: Vec<usize> = (0..width).filter(|&j| std[j] > 1e-18).collect();
    std.iter_mut().for_each(|s| *s = s.sqrt());
    let z: Vec<Vec<f64>> = features
        .iter()
        .map(|f| active.iter().map(|&j| (f[j] - mean[j]) / std[j]).collect())
        .collect();
    let d = active.len();
    let mut w = vec![vec![0.0; d]; NUM_CLASSES];
    let mut b = [0.0; NUM_CLASSES];
    let (rate, l2) = (0.5, 1e-4);
    for _ in 0..LOGISTIC_STEPS {
        let mut gw = vec![vec![0.0; d]; NUM_CLASSES];
        let mut gb = [0.0; NUM_CLASSES];
        for (x, &label) in z.iter().zip(&set.labels) {
            let scores: [f64; NUM_CLASSES] =
                std::array::from_fn(|c| b[c] + w[c].iter().zip(x).map(|(a, v)| a * v).sum::<f64>());
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: [f64; NUM_CLASSES] = std::array::from_fn(|c| (scores[c] - m).exp());
            let total: f64 = e.iter().sum();
            for c in 0..NUM_CLASSES {
                let g = e[c] / total - (c == label as usize) as u8 as f64;
                gb[c] += g;
                gw[c].iter_mut().zip(x).for_each(|(a, v)| *a += g * v);
            }
        }
        for c in 0..NUM_CLASSES {
            b[c] -= rate * gb[c] / n;
            for j in 0..d {
                w[c][j] -= rate * (gw[c][j] / n + l2 * w[c][j]);
            }
        }
    }
    let mut weights = vec![0.0; NUM_CLASSES * width];
    let mut bias = vec![0.0; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        bias[c] = b[c];
        for (i, &j) in active.iter().enumerate() {
            weights[c * width + j] = w[c][i] / std[j];
            bias[c] -= w[c][i] * mean[j] / std[j];
        }
    }
    Ok(FloatLayerParams { c_in: width, c_out: NUM_CLASSES, kernel: 1, weights, bias, bn: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer_passes_through() {
        let p = identity_layer(2, 3, 3);
        let x = vec![1.0, 2.0, 3.0, -4.0, 5.0, 6.0];
        let y = conv_same(&x, 2, 3, &p);
        assert_eq!(&y[..6], &x[..]);
        assert!(y[6..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn filter_bank_shape() {
        let p = matched_filter_bank();
        p.validate().unwrap();
        for band in 0..4 {
            for j in 0..2 {
                let o = 4 * band + j;
                let a = &p.weights[o * 9..(o + 1) * 9];
                let b = &p.weights[(o + 2) * 9..(o + 3) * 9];
                assert!(a.iter().zip(b).all(|(x, y)| *x == -*y));
                assert!((a.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn global_pool_is_mean() {
        let (y, len) = pool(vec![1.0, 3.0, -2.0, 2.0], 2, 2, PoolMode::GlobalAvgPool);
        assert_eq!((y, len), (vec![2.0, 0.0], 1));
    }
}
