//! Model preparation: batch-norm folding, 8-bit quantization, requant
//! constant derivation, weight-memory packing and the `SANN` binary format.
//!
//! # Binary layout
//!
//! All integers are little-endian.
//!
//! | offset | size | field |
//! |--------|------|-------|
//! | 0 | 4 | magic `"SANN"` |
//! | 4 | 2 | format version (1) |
//! | 6 | 1 | layer count `n` |
//! | 7 | 2 | input window length |
//! | 9 | 16·n | layer descriptors |
//! | .. | 4·Σc_out | bias table, i32 per output channel, layer order |
//! | .. | 2·⌈Σweights/2⌉ | weight words, two i8 per word, low byte first |
//!
//! Layer descriptor (16 bytes): `kind` u8 (0 conv, 1 fully connected),
//! `pool_mode` u8 (0 max-pool-2, 1 global average, 2 bypass), `activation`
//! u8 (0 ReLU-saturate, 1 signed bypass), `kernel` u8, `padding` u8,
//! `requant_shift` u8, `output_zero_point` u8, reserved u8 (0),
//! `c_in` u16, `c_out` u16, `requant_multiplier` i32.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qnn::{
    Activation, LayerKind, LayerSpec, LayerWeights, NetworkSpec, PoolMode, RequantParams,
    WeightSet,
};

pub const MAGIC: [u8; 4] = *b"SANN";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 9;
pub const DESCRIPTOR_BYTES: usize = 16;

/// Words in the weight memory (two cascaded 16K x 16-bit banks).
pub const WEIGHT_MEM_WORDS: usize = 32 * 1024;
pub const WEIGHT_BANK_WORDS: usize = 16 * 1024;
pub const WEIGHT_MEM_BYTES: usize = 2 * WEIGHT_MEM_WORDS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
}

/// Real-valued parameters of one layer; `weights` is `[c_out][c_in][k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatLayerParams {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bn: Option<BatchNorm>,
}

impl FloatLayerParams {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.c_out * self.c_in * self.kernel {
            return Err(Error::InvalidParams(format!(
                "expected {} weights, got {}",
                self.c_out * self.c_in * self.kernel,
                self.weights.len()
            )));
        }
        if self.bias.len() != self.c_out {
            return Err(Error::InvalidParams(format!(
                "expected {} biases, got {}",
                self.c_out,
                self.bias.len()
            )));
        }
        if let Some(bn) = &self.bn {
            for (name, v) in [
                ("gamma", &bn.gamma),
                ("beta", &bn.beta),
                ("running_mean", &bn.running_mean),
                ("running_var", &bn.running_var),
            ] {
                if v.len() != self.c_out {
                    return Err(Error::InvalidParams(format!(
                        "batch norm {name} has {} entries for {} channels",
                        v.len(),
                        self.c_out
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Folds batch normalization into the convolution weights and bias.
pub fn fold_batchnorm(params: &FloatLayerParams) -> Result<FloatLayerParams> {
    params.validate()?;
    let bn = params
        .bn
        .as_ref()
        .ok_or_else(|| Error::InvalidParams("layer has no batch norm to fold".into()))?;
    let per_out = params.c_in * params.kernel;
    let mut weights = params.weights.clone();
    let mut bias = params.bias.clone();
    for o in 0..params.c_out {
        let var = bn.running_var[o] + bn.epsilon;
        if var.is_nan() || var <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "channel {o}: running_var + epsilon = {var} is not positive"
            )));
        }
        let factor = bn.gamma[o] / var.sqrt();
        for w in &mut weights[o * per_out..(o + 1) * per_out] {
            *w *= factor;
        }
        bias[o] = (bias[o] - bn.running_mean[o]) * factor + bn.beta[o];
    }
    Ok(FloatLayerParams {
        weights,
        bias,
        bn: None,
        ..*params
    })
}

/// Symmetric per-tensor quantization to `[-127, 127]`, biases to i32 at
/// scale `input_scale * weight_scale`. Returns the weight scale.
pub fn quantize_weights(params: &FloatLayerParams, input_scale: f64) -> Result<(LayerWeights, f64)> {
    params.validate()?;
    if params.bn.is_some() {
        return Err(Error::InvalidParams(
            "batch norm must be folded before quantization".into(),
        ));
    }
    if !(input_scale > 0.0 && input_scale.is_finite()) {
        return Err(Error::InvalidParams(format!("input scale {input_scale} is not positive")));
    }
    if params.weights.iter().chain(&params.bias).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("non-finite parameter".into()));
    }
    let max_abs = params.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let weight_scale = if max_abs > 0.0 { max_abs / 127.0 } else { 1.0 };
    let weights = params
        .weights
        .iter()
        .map(|w| (w / weight_scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    let bias_scale = input_scale * weight_scale;
    let biases = params
        .bias
        .iter()
        .enumerate()
        .map(|(o, b)| {
            let q = (b / bias_scale).round();
            if q < i32::MIN as f64 || q > i32::MAX as f64 {
                Err(Error::InvalidParams(format!(
                    "bias {o} does not fit 32 bits at scale {bias_scale:e}"
                )))
            } else {
                Ok(q as i32)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((LayerWeights { weights, biases }, weight_scale))
}

/// Fixed-point form of `s_in * s_w / s_out`: multiplier in `[2^30, 2^31)`.
pub fn derive_requant_constants(s_in: f64, s_w: f64, s_out: f64) -> Result<RequantParams> {
    for (name, s) in [("s_in", s_in), ("s_w", s_w), ("s_out", s_out)] {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParams(format!("{name} = {s} is not a positive scale")));
        }
    }
    requant_for_ratio(s_in * s_w / s_out)
}

pub fn requant_for_ratio(ratio: f64) -> Result<RequantParams> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidParams(format!("rescale ratio {ratio} is not positive")));
    }
    // ratio = m * 2^e with m in [0.5, 1)
    let mut e = ratio.log2().floor() as i32 + 1;
    let mut m = ratio / 2f64.powi(e);
    if m >= 1.0 {
        m /= 2.0;
        e += 1;
    } else if m < 0.5 {
        m *= 2.0;
        e -= 1;
    }
    let mut multiplier = (m * 2f64.powi(31)).round() as i64;
    let mut shift = 31 - e;
    if multiplier == 1 << 31 {
        multiplier = 1 << 30;
        shift -= 1;
    }
    if shift < 0 {
        return Err(Error::InvalidParams(format!(
            "rescale ratio {ratio} too large for a 31-bit multiplier"
        )));
    }
    if shift > 62 {
        return Err(Error::InvalidParams(format!(
            "rescale ratio {ratio:e} needs shift {shift} > 62"
        )));
    }
    Ok(RequantParams::new(multiplier as i32, shift as u8))
}

/// Byte offset into the weight memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WeightAddress(pub u32);

impl WeightAddress {
    pub fn word(self) -> u16 {
        (self.0 >> 1) as u16
    }

    /// 0 for the low byte of the word, 1 for the high byte.
    pub fn lane(self) -> u8 {
        (self.0 & 1) as u8
    }

    /// Address bit 14 selects the bank.
    pub fn bank(self) -> u8 {
        ((self.word() >> 14) & 1) as u8
    }

    pub fn offset(self, bytes: usize) -> Self {
        Self(self.0 + bytes as u32)
    }
}

/// Weight-memory image in controller traversal order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SramImage {
    pub words: Vec<u16>,
    pub layer_bases: Vec<WeightAddress>,
}

impl SramImage {
    pub fn last_used_word(&self) -> Option<u16> {
        self.words.len().checked_sub(1).map(|w| w as u16)
    }

    pub fn byte(&self, addr: WeightAddress) -> i8 {
        let word = self.words[addr.word() as usize];
        (if addr.lane() == 0 { word as u8 } else { (word >> 8) as u8 }) as i8
    }
}

pub fn pack_words(bytes: impl IntoIterator<Item = i8>) -> Vec<u16> {
    let mut words = Vec::new();
    let mut pending: Option<u8> = None;
    for b in bytes {
        match pending.take() {
            None => pending = Some(b as u8),
            Some(lo) => words.push(u16::from_le_bytes([lo, b as u8])),
        }
    }
    if let Some(lo) = pending {
        words.push(lo as u16);
    }
    words
}

/// Lays weights out layer by layer, `[c_out][c_in][k]` within a layer, two
/// per word with no alignment between layers.
pub fn pack_sram_image(weights: &WeightSet) -> Result<SramImage> {
    let mut layer_bases = Vec::with_capacity(weights.layers.len());
    let mut cursor = 0usize;
    for (i, layer) in weights.layers.iter().enumerate() {
        layer_bases.push(WeightAddress(cursor as u32));
        cursor += layer.weights.len();
        if cursor > WEIGHT_MEM_BYTES {
            return Err(Error::Capacity {
                layer: i,
                needed: cursor,
                available: WEIGHT_MEM_BYTES,
            });
        }
    }
    let words = pack_words(weights.layers.iter().flat_map(|l| l.weights.iter().copied()));
    Ok(SramImage { words, layer_bases })
}

pub fn unpack_words(words: &[u16], count: usize) -> Vec<i8> {
    words
        .iter()
        .flat_map(|w| w.to_le_bytes())
        .take(count)
        .map(|b| b as i8)
        .collect()
}

/// Deployable model image: topology, requant constants, biases, weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedModel {
    pub input_length: usize,
    pub layers: Vec<LayerSpec>,
    pub bias_table: Vec<i32>,
    pub weight_words: Vec<u16>,
}

impl PackedModel {
    pub fn from_parts(net: &NetworkSpec, weights: &WeightSet) -> Result<Self> {
        net.validate()?;
        weights.check(net)?;
        let image = pack_sram_image(weights)?;
        Ok(Self {
            input_length: net.input_length,
            layers: net.layers.clone(),
            bias_table: weights
                .layers
                .iter()
                .flat_map(|l| l.biases.iter().copied())
                .collect(),
            weight_words: image.words,
        })
    }

    pub fn network(&self) -> NetworkSpec {
        NetworkSpec {
            layers: self.layers.clone(),
            input_length: self.input_length,
            num_classes: self.layers.last().map_or(0, |l| l.c_out),
        }
    }

    pub fn total_weights(&self) -> usize {
        self.layers.iter().map(LayerSpec::weight_count).sum()
    }

    /// Byte address of each layer's first weight.
    pub fn layer_bases(&self) -> Vec<WeightAddress> {
        let mut cursor = 0u32;
        self.layers
            .iter()
            .map(|l| {
                let base = WeightAddress(cursor);
                cursor += l.weight_count() as u32;
                base
            })
            .collect()
    }

    /// Offset of each layer's first bias in the bias table.
    pub fn bias_bases(&self) -> Vec<usize> {
        let mut cursor = 0;
        self.layers
            .iter()
            .map(|l| {
                let base = cursor;
                cursor += l.c_out;
                base
            })
            .collect()
    }

    pub fn weight_set(&self) -> WeightSet {
        let bytes = unpack_words(&self.weight_words, self.total_weights());
        let mut w_cursor = 0;
        let mut b_cursor = 0;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let n = l.weight_count();
                let lw = LayerWeights {
                    weights: bytes[w_cursor..w_cursor + n].to_vec(),
                    biases: self.bias_table[b_cursor..b_cursor + l.c_out].to_vec(),
                };
                w_cursor += n;
                b_cursor += l.c_out;
                lw
            })
            .collect();
        WeightSet { layers }
    }

    pub fn serialized_len(&self) -> usize {
        HEADER_BYTES
            + DESCRIPTOR_BYTES * self.layers.len()
            + 4 * self.bias_table.len()
            + 2 * self.weight_words.len()
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.layers.len() as u8);
        out.extend_from_slice(&(self.input_length as u16).to_le_bytes());
        for l in &self.layers {
            out.push(match l.kind {
                LayerKind::Conv1d => 0,
                LayerKind::FullyConnected => 1,
            });
            out.push(match l.pool_mode {
                PoolMode::MaxPool2 => 0,
                PoolMode::GlobalAvgPool => 1,
                PoolMode::Bypass => 2,
            });
            out.push(match l.activation {
                Activation::ReluSaturate => 0,
                Activation::SignedBypass => 1,
            });
            out.push(l.kernel as u8);
            out.push(l.padding as u8);
            out.push(l.requant.shift);
            out.push(l.output_zero_point);
            out.push(0);
            out.extend_from_slice(&(l.c_in as u16).to_le_bytes());
            out.extend_from_slice(&(l.c_out as u16).to_le_bytes());
            out.extend_from_slice(&l.requant.multiplier.to_le_bytes());
        }
        for b in &self.bias_table {
            out.extend_from_slice(&b.to_le_bytes());
        }
        for w in &self.weight_words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let layer_count = r.u8()? as usize;
        let input_length = r.u16()? as usize;
        if layer_count == 0 {
            return Err(Error::Malformed("model has no layers".into()));
        }
        let mut layers = Vec::with_capacity(layer_count);
        for i in 0..layer_count {
            let d = r.take(DESCRIPTOR_BYTES)?;
            let bad = |what: &str, v: u8| Error::Malformed(format!("layer {i}: invalid {what} code {v}"));
            let kind = match d[0] {
                0 => LayerKind::Conv1d,
                1 => LayerKind::FullyConnected,
                v => return Err(bad("kind", v)),
            };
            let pool_mode = match d[1] {
                0 => PoolMode::MaxPool2,
                1 => PoolMode::GlobalAvgPool,
                2 => PoolMode::Bypass,
                v => return Err(bad("pool mode", v)),
            };
            let activation = match d[2] {
                0 => Activation::ReluSaturate,
                1 => Activation::SignedBypass,
                v => return Err(bad("activation", v)),
            };
            if d[7] != 0 {
                return Err(Error::Malformed(format!("layer {i}: reserved byte is {}", d[7])));
            }
            layers.push(LayerSpec {
                kind,
                pool_mode,
                activation,
                kernel: d[3] as usize,
                padding: d[4] as usize,
                requant: RequantParams::new(
                    i32::from_le_bytes(d[12..16].try_into().unwrap()),
                    d[5],
                ),
                output_zero_point: d[6],
                c_in: u16::from_le_bytes([d[8], d[9]]) as usize,
                c_out: u16::from_le_bytes([d[10], d[11]]) as usize,
            });
        }
        let net = NetworkSpec {
            num_classes: layers.last().unwrap().c_out,
            layers,
            input_length,
        };
        net.validate()
            .map_err(|e| Error::Malformed(format!("inconsistent topology: {e}")))?;

        let total_weights = net.total_weights();
        let mut cursor = 0;
        for (i, l) in net.layers.iter().enumerate() {
            cursor += l.weight_count();
            if cursor > WEIGHT_MEM_BYTES {
                return Err(Error::Capacity {
                    layer: i,
                    needed: cursor,
                    available: WEIGHT_MEM_BYTES,
                });
            }
        }
        let bias_table = (0..net.total_biases())
            .map(|_| r.i32())
            .collect::<Result<Vec<_>>>()?;
        let weight_words = (0..total_weights.div_ceil(2))
            .map(|_| r.u16())
            .collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after weight image",
                bytes.len() - r.pos
            )));
        }
        if total_weights % 2 == 1 && weight_words.last().is_some_and(|w| w >> 8 != 0) {
            return Err(Error::Malformed("weight image padding byte is not zero".into()));
        }
        Ok(Self {
            input_length,
            layers: net.layers,
            bias_table,
            weight_words,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parameter payload of the 8-bit model: weights, 32-bit biases, and one
/// multiplier plus shift per layer.
pub fn int8_parameter_bytes(net: &NetworkSpec) -> usize {
    net.total_weights() + 4 * net.total_biases() + 5 * net.layers.len()
}

/// Parameter payload of the equivalent FP32 model, batch-norm statistics
/// (four values per convolution channel) included.
pub fn fp32_parameter_bytes(net: &NetworkSpec) -> usize {
    let bn: usize = net
        .layers
        .iter()
        .filter(|l| l.kind == LayerKind::Conv1d)
        .map(|l| 4 * l.c_out)
        .sum();
    4 * (net.total_weights() + net.total_biases() + bn)
}

/// One layer of a trained floating-point model as consumed by `pack`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatLayer {
    pub kind: LayerKind,
    pub pool_mode: PoolMode,
    pub params: FloatLayerParams,
    /// Real value of one output step (activation layers) or logit unit.
    pub output_scale: f64,
    #[serde(default)]
    pub output_zero_point: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatModel {
    pub input_length: usize,
    /// Real value of one input quantization step.
    pub input_scale: f64,
    pub layers: Vec<FloatLayer>,
}

/// Fold, quantize and derive requant constants for every layer.
pub fn quantize_model(model: &FloatModel) -> Result<(NetworkSpec, WeightSet)> {
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut weights = Vec::with_capacity(model.layers.len());
    let mut s_in = model.input_scale;
    for (i, fl) in model.layers.iter().enumerate() {
        let folded = match fl.params.bn {
            Some(_) => fold_batchnorm(&fl.params)?,
            None => fl.params.clone(),
        };
        let (lw, s_w) = quantize_weights(&folded, s_in)
            .map_err(|e| Error::InvalidParams(format!("layer {i}: {e}")))?;
        let requant = derive_requant_constants(s_in, s_w, fl.output_scale)
            .map_err(|e| Error::InvalidParams(format!("layer {i}: {e}")))?;
        let p = &fl.params;
        let mut spec = match fl.kind {
            LayerKind::Conv1d => LayerSpec::conv(p.c_in, p.c_out, p.kernel, fl.pool_mode),
            LayerKind::FullyConnected => LayerSpec::fully_connected(p.c_in, p.c_out),
        }
        .with_requant(requant);
        if i + 1 == model.layers.len() {
            spec.activation = Activation::SignedBypass;
        } else {
            spec.output_zero_point = fl.output_zero_point;
        }
        layers.push(spec);
        weights.push(lw);
        s_in = fl.output_scale;
    }
    let net = NetworkSpec {
        num_classes: layers.last().map_or(0, |l: &LayerSpec| l.c_out),
        layers,
        input_length: model.input_length,
    };
    net.validate()?;
    Ok((net, WeightSet { layers: weights }))
}
