//! Seeded random models and windows for equivalence testing.
//!
//! The requantization constants are chosen so that activations of a random
//! model stay spread over the 8-bit range instead of collapsing to 0 or 255.

use rand::Rng;

use crate::qnn::{
    LayerSpec, LayerWeights, NetworkSpec, PoolMode, QuantTensor, RequantParams, WeightSet,
};

/// Multiplier/shift pair approximating `ratio`, multiplier drawn at random
/// from the normalized range.
fn random_requant<R: Rng>(rng: &mut R, ratio: f64) -> RequantParams {
    let multiplier: i32 = rng.gen_range(1 << 30..i32::MAX);
    let shift = (multiplier as f64 / ratio).log2().round().clamp(0.0, 62.0) as u8;
    RequantParams::new(multiplier, shift)
}

/// Random weights and biases for `net`, plus fresh requant constants.
pub fn random_model<R: Rng>(rng: &mut R, net: &NetworkSpec) -> (NetworkSpec, WeightSet) {
    let mut net = net.clone();
    let mut layers = Vec::with_capacity(net.layers.len());
    for layer in &mut net.layers {
        let fan_in = (layer.c_in * layer.kernel) as f64;
        let acc_scale = fan_in.sqrt() * 70.0 * 60.0;
        let weights = (0..layer.weight_count())
            .map(|_| rng.gen_range(-127..=127))
            .collect();
        let bias_span = acc_scale as i32;
        let biases = (0..layer.c_out)
            .map(|_| rng.gen_range(-bias_span..=bias_span))
            .collect();
        let target = rng.gen_range(40.0..120.0);
        layer.requant = random_requant(rng, target / acc_scale);
        layers.push(LayerWeights { weights, biases });
    }
    (net, WeightSet { layers })
}

/// Uniform random window with a random zero point.
pub fn random_window<R: Rng>(rng: &mut R, channels: usize, length: usize) -> QuantTensor {
    let data = (0..channels * length).map(|_| rng.gen()).collect();
    let zero_point = rng.gen();
    QuantTensor::new(channels, length, data, 1.0, zero_point).expect("non-empty shape")
}

/// A small random topology: up to three convolutions (at most 8 channels,
/// K in {1, 3, 5, 9}), a global average pool and a fully connected head.
/// Input length never exceeds `max_len`.
pub fn random_small_network<R: Rng>(rng: &mut R, max_len: usize) -> NetworkSpec {
    const KERNELS: [usize; 4] = [1, 3, 5, 9];
    loop {
        let n_conv = rng.gen_range(1..=3);
        let pools: Vec<PoolMode> = (0..n_conv - 1)
            .map(|_| {
                if rng.gen_bool(0.6) {
                    PoolMode::MaxPool2
                } else {
                    PoolMode::Bypass
                }
            })
            .collect();
        let halvings = pools.iter().filter(|p| **p == PoolMode::MaxPool2).count() as u32;
        let gap_depth = 1usize << rng.gen_range(0..=4);
        // Any W in ((g-1)*2^m, g*2^m] reaches depth g after m ceil-halvings.
        let hi = (gap_depth << halvings).min(max_len);
        let lo = ((gap_depth - 1) << halvings) + 1;
        if lo > hi {
            continue;
        }
        let input_length = rng.gen_range(lo..=hi);

        let mut layers = Vec::new();
        let mut c_in = 1;
        for i in 0..n_conv {
            let c_out = rng.gen_range(1..=8);
            let k = KERNELS[rng.gen_range(0..KERNELS.len())];
            let pool = pools.get(i).copied().unwrap_or(PoolMode::GlobalAvgPool);
            let mut layer = LayerSpec::conv(c_in, c_out, k, pool);
            if rng.gen_bool(0.2) {
                layer.output_zero_point = rng.gen_range(0..64);
            }
            layers.push(layer);
            c_in = c_out;
        }
        let classes = rng.gen_range(2..=4);
        layers.push(LayerSpec::fully_connected(c_in, classes));
        let net = NetworkSpec {
            layers,
            input_length,
            num_classes: classes,
        };
        if net.validate().is_ok() {
            return net;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_networks_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let net = random_small_network(&mut rng, 48);
            net.validate().unwrap();
            assert!(net.input_length <= 48);
            for l in &net.layers[..net.layers.len() - 1] {
                assert!(l.c_out <= 8);
                assert!([1, 3, 5, 9].contains(&l.kernel));
            }
        }
    }

    #[test]
    fn random_model_matches_topology() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (net, w) = random_model(&mut rng, &NetworkSpec::table1());
        net.validate().unwrap();
        w.check(&net).unwrap();
    }
}
