//! Bit-exact integer-only reference model for the 1D CNN.
//!
//! Everything in this module defines the arithmetic contract the accelerator
//! simulator has to match: asymmetric unsigned 8-bit activations with an
//! explicit zero point, symmetric signed 8-bit weights, 32-bit accumulators
//! that must never wrap, and a fused multiplier/shift requantizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial length the global-average-pool unit is hardwired for.
pub const GAP_DEPTH: usize = 64;

/// Channel-major 8-bit activation map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantTensor {
    channels: usize,
    length: usize,
    data: Vec<u8>,
    /// Real value of one quantization step. Metadata only.
    pub scale: f32,
    pub zero_point: u8,
}

impl QuantTensor {
    pub fn new(
        channels: usize,
        length: usize,
        data: Vec<u8>,
        scale: f32,
        zero_point: u8,
    ) -> Result<Self> {
        if channels == 0 || length == 0 {
            return Err(Error::Shape(format!(
                "tensor dimensions must be non-zero, got {channels}x{length}"
            )));
        }
        if data.len() != channels * length {
            return Err(Error::Shape(format!(
                "tensor {channels}x{length} needs {} samples, got {}",
                channels * length,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            length,
            data,
            scale,
            zero_point,
        })
    }

    /// Single-channel tensor, the shape of a raw input window.
    pub fn from_window(data: Vec<u8>, scale: f32, zero_point: u8) -> Result<Self> {
        let len = data.len();
        Self::new(1, len, data, scale, zero_point)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, channel: usize, t: usize) -> u8 {
        self.data[channel * self.length + t]
    }

    pub fn row(&self, channel: usize) -> &[u8] {
        &self.data[channel * self.length..(channel + 1) * self.length]
    }
}

/// Signed 32-bit accumulator map, `[channels][length]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccMap {
    channels: usize,
    length: usize,
    data: Vec<i32>,
}

impl AccMap {
    pub fn new(channels: usize, length: usize, data: Vec<i32>) -> Result<Self> {
        if data.len() != channels * length {
            return Err(Error::Shape(format!(
                "accumulator map {channels}x{length} needs {} values, got {}",
                channels * length,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            length,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn get(&self, channel: usize, t: usize) -> i32 {
        self.data[channel * self.length + t]
    }

    pub fn row(&self, channel: usize) -> &[i32] {
        &self.data[channel * self.length..(channel + 1) * self.length]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Conv1d,
    FullyConnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolMode {
    MaxPool2,
    GlobalAvgPool,
    Bypass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    /// Unsigned saturation to `[0, 255]`; doubles as the ReLU.
    ReluSaturate,
    /// Signed 32-bit passthrough used for the logits.
    SignedBypass,
}

/// Fused rescaling constant: `value * multiplier / 2^shift`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RequantParams {
    pub multiplier: i32,
    pub shift: u8,
}

impl RequantParams {
    pub const IDENTITY: Self = Self {
        multiplier: 1 << 30,
        shift: 30,
    };

    pub fn new(multiplier: i32, shift: u8) -> Self {
        Self { multiplier, shift }
    }

    pub fn ratio(&self) -> f64 {
        self.multiplier as f64 / 2f64.powi(self.shift as i32)
    }
}

/// One layer as the runtime configuration registers see it. Stride is
/// always one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub padding: usize,
    pub pool_mode: PoolMode,
    pub requant: RequantParams,
    pub activation: Activation,
    /// Added after rescaling on `ReluSaturate` layers; 0 in the default model.
    pub output_zero_point: u8,
}

impl LayerSpec {
    /// Same-padded convolution followed by ReLU.
    pub fn conv(c_in: usize, c_out: usize, kernel: usize, pool_mode: PoolMode) -> Self {
        Self {
            kind: LayerKind::Conv1d,
            c_in,
            c_out,
            kernel,
            padding: kernel.saturating_sub(1) / 2,
            pool_mode,
            requant: RequantParams::IDENTITY,
            activation: Activation::ReluSaturate,
            output_zero_point: 0,
        }
    }

    pub fn fully_connected(c_in: usize, c_out: usize) -> Self {
        Self {
            kind: LayerKind::FullyConnected,
            c_in,
            c_out,
            kernel: 1,
            padding: 0,
            pool_mode: PoolMode::Bypass,
            requant: RequantParams::IDENTITY,
            activation: Activation::SignedBypass,
            output_zero_point: 0,
        }
    }

    pub fn with_requant(mut self, requant: RequantParams) -> Self {
        self.requant = requant;
        self
    }

    pub fn weight_count(&self) -> usize {
        self.c_out * self.c_in * self.kernel
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.kernel == 0 {
            return Err(Error::Config(format!(
                "channel counts and kernel must be non-zero: {}->{} K={}",
                self.c_in, self.c_out, self.kernel
            )));
        }
        if self.requant.shift > 63 {
            return Err(Error::Config(format!(
                "requant shift {} outside [0, 63]",
                self.requant.shift
            )));
        }
        match self.kind {
            LayerKind::FullyConnected => {
                if self.kernel != 1
                    || self.padding != 0
                    || self.pool_mode != PoolMode::Bypass
                    || self.activation != Activation::SignedBypass
                {
                    return Err(Error::Config(
                        "fully connected layers need K=1, no padding, bypass pooling and signed output"
                            .into(),
                    ));
                }
            }
            LayerKind::Conv1d => {
                if 2 * self.padding + 1 != self.kernel {
                    return Err(Error::Config(format!(
                        "convolution must be same-padded: K={} padding={}",
                        self.kernel, self.padding
                    )));
                }
            }
        }
        Ok(())
    }

    /// Spatial output length for a given input length, after pooling.
    pub fn output_length(&self, w_in: usize) -> Result<usize> {
        if w_in == 0 {
            return Err(Error::Shape("layer input length is zero".into()));
        }
        if self.kind == LayerKind::FullyConnected && w_in != 1 {
            return Err(Error::Shape(format!(
                "fully connected layer expects a pooled vector, got spatial length {w_in}"
            )));
        }
        match self.pool_mode {
            PoolMode::Bypass => Ok(w_in),
            PoolMode::MaxPool2 => Ok(w_in.div_ceil(2)),
            PoolMode::GlobalAvgPool => {
                gap_shift_for(w_in)?;
                Ok(1)
            }
        }
    }
}

/// Shift the pooling unit uses to average `depth` samples.
pub fn gap_shift_for(depth: usize) -> Result<u32> {
    if depth == 0 || !depth.is_power_of_two() {
        return Err(Error::Config(format!(
            "global average pooling needs a power-of-two depth, got {depth}"
        )));
    }
    Ok(depth.trailing_zeros())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub input_length: usize,
    pub num_classes: usize,
}

impl NetworkSpec {
    pub const INPUT_LENGTH: usize = 512;
    pub const NUM_CLASSES: usize = 3;

    /// The five-layer deployed topology with a 128-wide final convolution.
    pub fn table1() -> Self {
        Self::table1_with_width(128)
    }

    /// Same topology with a configurable final convolution width (96 or 128).
    pub fn table1_with_width(l3_width: usize) -> Self {
        Self {
            layers: vec![
                LayerSpec::conv(1, 16, 9, PoolMode::MaxPool2),
                LayerSpec::conv(16, 32, 9, PoolMode::MaxPool2),
                LayerSpec::conv(32, 64, 9, PoolMode::MaxPool2),
                LayerSpec::conv(64, l3_width, 5, PoolMode::GlobalAvgPool),
                LayerSpec::fully_connected(l3_width, Self::NUM_CLASSES),
            ],
            input_length: Self::INPUT_LENGTH,
            num_classes: Self::NUM_CLASSES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(Error::Config("network has no layers".into()));
        };
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            let is_last = i + 1 == self.layers.len();
            if is_last != (layer.activation == Activation::SignedBypass) {
                return Err(Error::Config(format!(
                    "layer {i}: only the final layer may emit signed logits"
                )));
            }
            if let Some(next) = self.layers.get(i + 1) {
                if layer.c_out != next.c_in {
                    return Err(Error::Config(format!(
                        "layer {i} produces {} channels but layer {} consumes {}",
                        layer.c_out,
                        i + 1,
                        next.c_in
                    )));
                }
            }
        }
        if last.c_out != self.num_classes {
            return Err(Error::Config(format!(
                "final layer has {} outputs for {} classes",
                last.c_out, self.num_classes
            )));
        }
        let lengths = self.layer_input_lengths()?;
        let final_len = last.output_length(*lengths.last().unwrap())?;
        if final_len != 1 {
            return Err(Error::Config(format!(
                "network must reduce to one spatial position, ends at {final_len}"
            )));
        }
        Ok(())
    }

    /// Input spatial length of every layer.
    pub fn layer_input_lengths(&self) -> Result<Vec<usize>> {
        let mut lengths = Vec::with_capacity(self.layers.len());
        let mut w = self.input_length;
        for layer in &self.layers {
            lengths.push(w);
            w = layer.output_length(w)?;
        }
        Ok(lengths)
    }

    pub fn total_weights(&self) -> usize {
        self.layers.iter().map(LayerSpec::weight_count).sum()
    }

    pub fn total_biases(&self) -> usize {
        self.layers.iter().map(|l| l.c_out).sum()
    }
}

/// Integer parameters of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerWeights {
    /// `[c_out][c_in][k]`
    pub weights: Vec<i8>,
    pub biases: Vec<i32>,
}

impl LayerWeights {
    pub fn weight(&self, layer: &LayerSpec, o: usize, c: usize, k: usize) -> i8 {
        self.weights[(o * layer.c_in + c) * layer.kernel + k]
    }

    pub fn check(&self, layer: &LayerSpec) -> Result<()> {
        if self.weights.len() != layer.weight_count() {
            return Err(Error::Shape(format!(
                "expected {} weights, got {}",
                layer.weight_count(),
                self.weights.len()
            )));
        }
        if self.biases.len() != layer.c_out {
            return Err(Error::Shape(format!(
                "expected {} biases, got {}",
                layer.c_out,
                self.biases.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightSet {
    pub layers: Vec<LayerWeights>,
}

impl WeightSet {
    pub fn check(&self, net: &NetworkSpec) -> Result<()> {
        if self.layers.len() != net.layers.len() {
            return Err(Error::Shape(format!(
                "weight set has {} layers, network has {}",
                self.layers.len(),
                net.layers.len()
            )));
        }
        for (i, (w, l)) in self.layers.iter().zip(&net.layers).enumerate() {
            w.check(l)
                .map_err(|e| Error::Shape(format!("layer {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn zeros(net: &NetworkSpec) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerWeights {
                    weights: vec![0; l.weight_count()],
                    biases: vec![0; l.c_out],
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Logits {
    pub values: Vec<i32>,
    pub predicted_class: usize,
}

impl Logits {
    pub fn new(values: Vec<i32>) -> Self {
        let predicted_class = argmax(&values);
        Self {
            values,
            predicted_class,
        }
    }
}

/// Index of the maximum; the lowest index wins ties.
pub fn argmax(values: &[i32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Normalizes a raw window to zero mean / unit variance and quantizes it.
///
/// A flat window has no variance; its deviation is taken as 1 so every
/// sample lands on the zero point.
pub fn zscore_quantize(window: &[f32], zero_point: u8, scale_divisor: f64) -> Result<QuantTensor> {
    if window.is_empty() {
        return Err(Error::InvalidInput("empty window".into()));
    }
    if !(scale_divisor > 0.0 && scale_divisor.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "scale divisor must be positive, got {scale_divisor}"
        )));
    }
    if window.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("window contains non-finite samples".into()));
    }
    let n = window.len() as f64;
    let mean = window.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = window
        .iter()
        .map(|&x| {
            let d = x as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let data = window
        .iter()
        .map(|&x| {
            let q = ((x as f64 - mean) / std / scale_divisor).round() + zero_point as f64;
            q.clamp(0.0, 255.0) as u8
        })
        .collect();
    QuantTensor::from_window(data, scale_divisor as f32, zero_point)
}

fn accumulate(input: &QuantTensor, layer: &LayerSpec, params: &LayerWeights) -> Result<AccMap> {
    if input.channels() != layer.c_in {
        return Err(Error::Shape(format!(
            "layer expects {} input channels, tensor has {}",
            layer.c_in,
            input.channels()
        )));
    }
    params.check(layer)?;
    let w_in = input.length();
    let w_out = (w_in + 2 * layer.padding)
        .checked_sub(layer.kernel - 1)
        .filter(|&w| w > 0)
        .ok_or_else(|| {
            Error::Shape(format!(
                "input length {w_in} too short for K={} padding={}",
                layer.kernel, layer.padding
            ))
        })?;
    let zp = input.zero_point as i32;
    let mut out = Vec::with_capacity(layer.c_out * w_out);
    for o in 0..layer.c_out {
        for t in 0..w_out {
            let mut acc = params.biases[o];
            for c in 0..layer.c_in {
                let row = input.row(c);
                for k in 0..layer.kernel {
                    // Out-of-range taps read the zero point, i.e. contribute nothing.
                    let x = (t + k)
                        .checked_sub(layer.padding)
                        .and_then(|i| row.get(i))
                        .map_or(0, |&x| x as i32 - zp);
                    let w = params.weight(layer, o, c, k) as i32;
                    acc = acc.checked_add(x * w).ok_or(Error::Overflow {
                        stage: "convolution",
                        channel: o,
                        position: t,
                    })?;
                }
            }
            out.push(acc);
        }
    }
    AccMap::new(layer.c_out, w_out, out)
}

/// Same-padded stride-one convolution into 32-bit accumulators, bias included.
pub fn conv1d_acc(input: &QuantTensor, layer: &LayerSpec, params: &LayerWeights) -> Result<AccMap> {
    if layer.kind != LayerKind::Conv1d {
        return Err(Error::Config("conv1d_acc called on a non-convolution layer".into()));
    }
    accumulate(input, layer, params)
}

/// Fully connected layer evaluated as a 1x1 convolution over a pooled vector.
pub fn fully_connected_acc(
    input: &QuantTensor,
    layer: &LayerSpec,
    params: &LayerWeights,
) -> Result<Vec<i32>> {
    if layer.kind != LayerKind::FullyConnected {
        return Err(Error::Config(
            "fully_connected_acc called on a convolution layer".into(),
        ));
    }
    if input.length() != 1 {
        return Err(Error::Shape(format!(
            "fully connected input must have spatial length 1, got {}",
            input.length()
        )));
    }
    Ok(accumulate(input, layer, params)?.data)
}

/// 2x1 max pooling. An odd trailing element is paired with `i32::MIN`.
pub fn maxpool2_acc(acc: &AccMap) -> AccMap {
    let w_out = acc.length.div_ceil(2);
    let mut out = Vec::with_capacity(acc.channels * w_out);
    for o in 0..acc.channels {
        let row = acc.row(o);
        for i in 0..w_out {
            let a = row[2 * i];
            let b = row.get(2 * i + 1).copied().unwrap_or(i32::MIN);
            out.push(a.max(b));
        }
    }
    AccMap {
        channels: acc.channels,
        length: w_out,
        data: out,
    }
}

/// Global average pooling over the hardwired 64-sample depth.
pub fn gap_shift_acc(acc: &AccMap) -> Result<Vec<i32>> {
    if acc.length != GAP_DEPTH {
        return Err(Error::Config(format!(
            "global average pooling is wired for depth {GAP_DEPTH}, got {}",
            acc.length
        )));
    }
    global_avg_pool_shift(acc)
}

/// Global average pooling for any power-of-two depth: every element is
/// arithmetically shifted before it is added to the running sum.
pub fn global_avg_pool_shift(acc: &AccMap) -> Result<Vec<i32>> {
    let shift = gap_shift_for(acc.length)?;
    (0..acc.channels)
        .map(|o| {
            acc.row(o).iter().enumerate().try_fold(0i32, |sum, (t, &v)| {
                sum.checked_add(v >> shift).ok_or(Error::Overflow {
                    stage: "global average pool",
                    channel: o,
                    position: t,
                })
            })
        })
        .collect()
}

/// `round(acc * multiplier / 2^shift)`, ties away from zero, before saturation.
pub fn rescale(acc: i32, requant: RequantParams) -> i64 {
    let product = acc as i64 * requant.multiplier as i64;
    let shift = requant.shift as u32;
    if shift == 0 {
        return product;
    }
    let half = 1u128 << (shift - 1);
    let magnitude = ((product.unsigned_abs() as u128 + half) >> shift) as i64;
    if product < 0 {
        -magnitude
    } else {
        magnitude
    }
}

/// Output of the requantization and activation stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Requantized {
    Activation(u8),
    Logit(i32),
}

pub fn requantize(acc: i32, requant: RequantParams, activation: Activation) -> Requantized {
    requantize_with_zero_point(acc, requant, activation, 0)
}

pub fn requantize_with_zero_point(
    acc: i32,
    requant: RequantParams,
    activation: Activation,
    output_zero_point: u8,
) -> Requantized {
    let r = rescale(acc, requant);
    match activation {
        Activation::ReluSaturate => {
            Requantized::Activation((r + output_zero_point as i64).clamp(0, 255) as u8)
        }
        Activation::SignedBypass => {
            Requantized::Logit(r.clamp(i32::MIN as i64, i32::MAX as i64) as i32)
        }
    }
}

pub fn requantize_u8(acc: i32, requant: RequantParams, output_zero_point: u8) -> u8 {
    match requantize_with_zero_point(acc, requant, Activation::ReluSaturate, output_zero_point) {
        Requantized::Activation(v) => v,
        Requantized::Logit(_) => unreachable!(),
    }
}

pub fn requantize_logit(acc: i32, requant: RequantParams) -> i32 {
    match requantize(acc, requant, Activation::SignedBypass) {
        Requantized::Logit(v) => v,
        Requantized::Activation(_) => unreachable!(),
    }
}

/// Result of a golden inference: logits plus every 8-bit activation map.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub logits: Logits,
    /// Output of every `ReluSaturate` layer, in order.
    pub activations: Vec<QuantTensor>,
}

/// Runs one ReLU layer end to end: accumulate, pool, requantize.
pub fn run_activation_layer(
    input: &QuantTensor,
    layer: &LayerSpec,
    params: &LayerWeights,
) -> Result<QuantTensor> {
    let acc = conv1d_acc(input, layer, params)?;
    let pooled = match layer.pool_mode {
        PoolMode::MaxPool2 => maxpool2_acc(&acc),
        PoolMode::GlobalAvgPool => {
            let v = global_avg_pool_shift(&acc)?;
            AccMap::new(layer.c_out, 1, v)?
        }
        PoolMode::Bypass => acc,
    };
    let data = pooled
        .data()
        .iter()
        .map(|&a| requantize_u8(a, layer.requant, layer.output_zero_point))
        .collect();
    QuantTensor::new(
        pooled.channels(),
        pooled.length(),
        data,
        1.0,
        layer.output_zero_point,
    )
}

/// Integer-only inference of one window.
pub fn infer_window(net: &NetworkSpec, weights: &WeightSet, input: &QuantTensor) -> Result<Inference> {
    net.validate()?;
    weights.check(net)?;
    if input.length() != net.input_length || input.channels() != net.layers[0].c_in {
        return Err(Error::Shape(format!(
            "network expects a {}x{} window, got {}x{}",
            net.layers[0].c_in,
            net.input_length,
            input.channels(),
            input.length()
        )));
    }
    let (last, hidden) = net.layers.split_last().unwrap();
    let mut activations = Vec::with_capacity(hidden.len());
    let mut x = input.clone();
    for (layer, params) in hidden.iter().zip(&weights.layers) {
        x = run_activation_layer(&x, layer, params)?;
        activations.push(x.clone());
    }
    let params = weights.layers.last().unwrap();
    let acc = match last.kind {
        LayerKind::FullyConnected => fully_connected_acc(&x, last, params)?,
        LayerKind::Conv1d => {
            let acc = conv1d_acc(&x, last, params)?;
            match last.pool_mode {
                PoolMode::MaxPool2 => maxpool2_acc(&acc).data,
                PoolMode::GlobalAvgPool => global_avg_pool_shift(&acc)?,
                PoolMode::Bypass => acc.data,
            }
        }
    };
    let values = acc.iter().map(|&a| requantize_logit(a, last.requant)).collect();
    Ok(Inference {
        logits: Logits::new(values),
        activations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(channels: usize, data: Vec<u8>, zp: u8) -> QuantTensor {
        let len = data.len() / channels;
        QuantTensor::new(channels, len, data, 1.0, zp).unwrap()
    }

    #[test]
    fn tensor_shape_is_checked() {
        assert!(QuantTensor::new(2, 3, vec![0; 5], 1.0, 0).is_err());
        assert!(QuantTensor::new(0, 3, vec![], 1.0, 0).is_err());
    }

    #[test]
    fn zscore_constant_window_is_centered() {
        let q = zscore_quantize(&[5.0; 512], 128, 1.0 / 32.0).unwrap();
        assert!(q.data().iter().all(|&v| v == 128));
    }

    #[test]
    fn zscore_alternating_window() {
        let w: Vec<f32> = (0..512).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let q = zscore_quantize(&w, 128, 1.0 / 32.0).unwrap();
        for (i, &v) in q.data().iter().enumerate() {
            assert_eq!(v, if i % 2 == 0 { 96 } else { 160 });
        }
    }

    #[test]
    fn zscore_saturates_and_rejects_empty() {
        let mut w = vec![0.0f32; 512];
        w[0] = 1000.0;
        let q = zscore_quantize(&w, 128, 1.0 / 32.0).unwrap();
        assert_eq!(q.data()[0], 255);
        assert!(matches!(
            zscore_quantize(&[], 128, 1.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn identity_kernel_passes_input() {
        let layer = LayerSpec::conv(1, 1, 1, PoolMode::Bypass);
        let params = LayerWeights {
            weights: vec![1],
            biases: vec![0],
        };
        let x = tensor(1, vec![3, 7, 255, 0, 42], 0);
        let acc = conv1d_acc(&x, &layer, &params).unwrap();
        assert_eq!(acc.data(), &[3, 7, 255, 0, 42]);
    }

    #[test]
    fn zero_point_input_yields_bias() {
        let layer = LayerSpec::conv(2, 3, 9, PoolMode::MaxPool2);
        let params = LayerWeights {
            weights: (0..54).map(|i| (i as i8).wrapping_mul(7)).collect(),
            biases: vec![-5, 0, 1234],
        };
        let x = tensor(2, vec![77; 40], 77);
        let acc = conv1d_acc(&x, &layer, &params).unwrap();
        for o in 0..3 {
            assert!(acc.row(o).iter().all(|&v| v == params.biases[o]));
        }
    }

    #[test]
    fn conv_channel_mismatch_is_shape_error() {
        let layer = LayerSpec::conv(2, 1, 3, PoolMode::Bypass);
        let params = LayerWeights {
            weights: vec![0; 6],
            biases: vec![0],
        };
        let x = tensor(1, vec![0; 8], 0);
        assert!(matches!(conv1d_acc(&x, &layer, &params), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_overflow_is_detected() {
        let layer = LayerSpec::conv(1, 1, 1, PoolMode::Bypass);
        let params = LayerWeights {
            weights: vec![127],
            biases: vec![i32::MAX - 100],
        };
        let x = tensor(1, vec![255], 0);
        assert!(matches!(
            conv1d_acc(&x, &layer, &params),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn maxpool_examples() {
        let acc = AccMap::new(1, 4, vec![1, 5, 3, 2]).unwrap();
        assert_eq!(maxpool2_acc(&acc).data(), &[5, 3]);
        let flat = AccMap::new(2, 6, vec![-9; 12]).unwrap();
        let p = maxpool2_acc(&flat);
        assert_eq!(p.length(), 3);
        assert!(p.data().iter().all(|&v| v == -9));
        let odd = AccMap::new(1, 3, vec![i32::MIN + 1, -4, -7]).unwrap();
        assert_eq!(maxpool2_acc(&odd).data(), &[-4, -7]);
    }

    #[test]
    fn gap_examples() {
        let acc = AccMap::new(1, 64, vec![64; 64]).unwrap();
        assert_eq!(gap_shift_acc(&acc).unwrap(), vec![64]);
        let acc = AccMap::new(1, 64, vec![63; 64]).unwrap();
        assert_eq!(gap_shift_acc(&acc).unwrap(), vec![0]);
        // floor shift on negatives: -1 >> 6 == -1
        let acc = AccMap::new(1, 64, vec![-1; 64]).unwrap();
        assert_eq!(gap_shift_acc(&acc).unwrap(), vec![-64]);
        let acc = AccMap::new(1, 32, vec![0; 32]).unwrap();
        assert!(matches!(gap_shift_acc(&acc), Err(Error::Config(_))));
    }

    #[test]
    fn requantize_examples() {
        let rq = RequantParams::new(1 << 30, 31);
        assert_eq!(requantize(0, rq, Activation::ReluSaturate), Requantized::Activation(0));
        assert_eq!(requantize(0, RequantParams::new(-77, 3), Activation::SignedBypass), Requantized::Logit(0));
        assert_eq!(requantize(1000, rq, Activation::ReluSaturate), Requantized::Activation(255));
        assert_eq!(requantize(1000, rq, Activation::SignedBypass), Requantized::Logit(500));
        assert_eq!(requantize(-5, rq, Activation::ReluSaturate), Requantized::Activation(0));
        // ties away from zero
        assert_eq!(requantize_logit(3, rq), 2);
        assert_eq!(requantize_logit(-3, rq), -2);
        assert_eq!(requantize_logit(i32::MIN, RequantParams::new(i32::MIN, 0)), i32::MAX);
        assert_eq!(requantize_u8(10, RequantParams::IDENTITY, 100), 110);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0, 0, 0]), 0);
        assert_eq!(argmax(&[1, 3, 3]), 1);
        assert_eq!(argmax(&[-5, -6, -4]), 2);
    }

    #[test]
    fn default_topology_is_valid() {
        let net = NetworkSpec::table1();
        net.validate().unwrap();
        assert_eq!(net.layer_input_lengths().unwrap(), vec![512, 256, 128, 64, 1]);
        assert_eq!(net.total_weights(), 64_528);
        NetworkSpec::table1_with_width(96).validate().unwrap();
    }

    #[test]
    fn topology_validation() {
        let mut net = NetworkSpec::table1();
        net.layers[1].c_in = 15;
        assert!(net.validate().is_err());
        let mut net = NetworkSpec::table1();
        net.layers[4].kernel = 3;
        assert!(net.validate().is_err());
        let mut net = NetworkSpec::table1();
        net.layers[0].padding = 3;
        assert!(net.validate().is_err());
        let mut net = NetworkSpec::table1();
        net.input_length = 256; // L3 would see depth 32, then FC still gets 1
        assert!(net.validate().is_ok());
        net.input_length = 500; // L3 depth 63: not a power of two
        assert!(net.validate().is_err());
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let net = NetworkSpec::table1();
        let weights = WeightSet::zeros(&net);
        let x = QuantTensor::from_window(vec![128; 512], 1.0, 128).unwrap();
        let out = infer_window(&net, &weights, &x).unwrap();
        assert_eq!(out.logits.values, vec![0, 0, 0]);
        assert_eq!(out.logits.predicted_class, 0);
        assert_eq!(out.activations.len(), 4);
        assert_eq!(out.activations[0].length(), 256);
        assert_eq!(out.activations[3].length(), 1);
    }

    #[test]
    fn wrong_window_length_is_rejected() {
        let net = NetworkSpec::table1();
        let weights = WeightSet::zeros(&net);
        let x = QuantTensor::from_window(vec![0; 500], 1.0, 0).unwrap();
        assert!(matches!(infer_window(&net, &weights, &x), Err(Error::Shape(_))));
    }
}
