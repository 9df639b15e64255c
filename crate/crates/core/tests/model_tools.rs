#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scgnn_core::model::{
    derive_requant_constants, fold_batchnorm, fp32_parameter_bytes, int8_parameter_bytes,
    pack_sram_image, quantize_model, quantize_weights, requant_for_ratio, BatchNorm, FloatLayer,
    FloatLayerParams, FloatModel, WEIGHT_BANK_WORDS,
};
use scgnn_core::qnn::{requantize_logit, rescale};
use scgnn_core::random::{random_model, random_small_network};
use scgnn_core::{LayerKind, NetworkSpec, PackedModel, PoolMode, WeightAddress};

fn conv_f64(p: &FloatLayerParams, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let pad = p.kernel / 2;
    let len = x[0].len();
    (0..p.c_out)
        .map(|o| {
            (0..len)
                .map(|t| {
                    let mut s = p.bias[o];
                    for c in 0..p.c_in {
                        for k in 0..p.kernel {
                            let i = t as isize + k as isize - pad as isize;
                            if i >= 0 && (i as usize) < len {
                                s += x[c][i as usize] * p.weights[(o * p.c_in + c) * p.kernel + k];
                            }
                        }
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn random_params(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, kernel: usize) -> FloatLayerParams {
    FloatLayerParams {
        c_in,
        c_out,
        kernel,
        weights: (0..c_in * c_out * kernel).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        bias: (0..c_out).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        bn: Some(BatchNorm {
            gamma: (0..c_out).map(|_| rng.gen_range(0.2..2.0)).collect(),
            beta: (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            running_mean: (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            running_var: (0..c_out).map(|_| rng.gen_range(0.1..3.0)).collect(),
            epsilon: 1e-5,
        }),
    }
}

#[test]
fn folded_conv_matches_conv_then_bn() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let p = random_params(&mut rng, 3, 4, 9);
        let folded = fold_batchnorm(&p).unwrap();
        let x: Vec<Vec<f64>> = (0..3).map(|_| (0..40).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let mut plain = p.clone();
        plain.bn = None;
        let y = conv_f64(&plain, &x);
        let bn = p.bn.as_ref().unwrap();
        let yf = conv_f64(&folded, &x);
        for o in 0..4 {
            for t in 0..40 {
                let want = (y[o][t] - bn.running_mean[o]) / (bn.running_var[o] + bn.epsilon).sqrt()
                    * bn.gamma[o]
                    + bn.beta[o];
                let got = yf[o][t];
                assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "{got} vs {want}");
            }
        }
    }
}

#[test]
fn quantization_error_is_half_a_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let mut p = random_params(&mut rng, 4, 8, 5);
        p.bn = None;
        let (q, s) = quantize_weights(&p, 0.03).unwrap();
        for (w, qw) in p.weights.iter().zip(&q.weights) {
            assert!((w - *qw as f64 * s).abs() <= s / 2.0 + 1e-12);
            assert!((-127..=127).contains(qw));
        }
    }
}

#[test]
fn requant_constants_reconstruct_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let ratio = 10f64.powf(rng.gen_range(-6.0..0.0));
        let rq = requant_for_ratio(ratio).unwrap();
        assert!((1 << 30..=i32::MAX).contains(&rq.multiplier));
        let rel = (rq.ratio() - ratio).abs() / ratio;
        assert!(rel < 2f64.powi(-30), "ratio {ratio}: rel err {rel:e}");
        // within one output step over the whole accumulator range
        let acc: i32 = rng.gen();
        let exact = acc as f64 * ratio;
        assert!((requantize_logit(acc, rq) as f64 - exact).abs() <= 1.0);
        assert!((rescale(acc, rq) as f64 - exact).abs() <= 1.0);
    }
    let rq = derive_requant_constants(0.5, 0.25, 0.125).unwrap();
    assert_eq!(rq.ratio(), 1.0);
    assert!(derive_requant_constants(0.0, 1.0, 1.0).is_err());
}

#[test]
fn default_image_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (net, ws) = random_model(&mut rng, &NetworkSpec::table1());
    let image = pack_sram_image(&ws).unwrap();
    assert_eq!(image.words.len(), 32_264);
    assert_eq!(image.last_used_word(), Some(0x7E07));
    assert!(image.words.len() > WEIGHT_BANK_WORDS);
    let first_bank1 = WeightAddress(2 * WEIGHT_BANK_WORDS as u32);
    assert_eq!(first_bank1.word(), 0x4000);
    assert_eq!(first_bank1.bank(), 1);
    assert_eq!(image.layer_bases[1], WeightAddress(144));
    // every weight is recoverable at its (bank, word, lane)
    for (l, (layer, w)) in net.layers.iter().zip(&ws.layers).enumerate() {
        let base = image.layer_bases[l];
        for (i, &v) in w.weights.iter().enumerate() {
            let addr = base.offset(i);
            let word = image.words[addr.word() as usize];
            assert_eq!((addr.word() >> 14) as u8, addr.bank());
            let byte = if addr.lane() == 0 { word & 0xFF } else { word >> 8 } as u8 as i8;
            assert_eq!(byte, v, "layer {l} weight {i}");
        }
        assert_eq!(w.weights.len(), layer.weight_count());
    }
}

#[test]
fn int8_payload_is_roughly_thirty_percent_of_fp32() {
    let net = NetworkSpec::table1();
    let ratio = int8_parameter_bytes(&net) as f64 / fp32_parameter_bytes(&net) as f64;
    assert!((ratio - 0.30).abs() < 0.06, "ratio {ratio}");
}

#[test]
fn float_model_pipeline() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mk = |rng: &mut ChaCha8Rng, kind, c_in, c_out, k, pool, scale| FloatLayer {
        kind,
        pool_mode: pool,
        params: {
            let mut p = random_params(rng, c_in, c_out, k);
            if kind == LayerKind::FullyConnected {
                p.bn = None;
            }
            p
        },
        output_scale: scale,
        output_zero_point: 0,
    };
    let model = FloatModel {
        input_length: 512,
        input_scale: 1.0 / 32.0,
        layers: vec![
            mk(&mut rng, LayerKind::Conv1d, 1, 16, 9, PoolMode::MaxPool2, 0.05),
            mk(&mut rng, LayerKind::Conv1d, 16, 32, 9, PoolMode::MaxPool2, 0.05),
            mk(&mut rng, LayerKind::Conv1d, 32, 64, 9, PoolMode::MaxPool2, 0.05),
            mk(&mut rng, LayerKind::Conv1d, 64, 128, 5, PoolMode::GlobalAvgPool, 0.05),
            mk(&mut rng, LayerKind::FullyConnected, 128, 3, 1, PoolMode::Bypass, 0.01),
        ],
    };
    let (net, ws) = quantize_model(&model).unwrap();
    assert_eq!(net.layers.len(), 5);
    let packed = PackedModel::from_parts(&net, &ws).unwrap();
    let back = PackedModel::deserialize(&packed.serialize()).unwrap();
    assert_eq!(back.network(), net);
    assert_eq!(back.weight_set(), ws);
    let json = serde_json::to_string(&model).unwrap();
    let parsed: FloatModel = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed, model);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialize_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = if seed % 8 == 0 { NetworkSpec::table1() } else { random_small_network(&mut rng, 48) };
        let (net, ws) = random_model(&mut rng, &base);
        let packed = PackedModel::from_parts(&net, &ws).unwrap();
        let bytes = packed.serialize();
        let back = PackedModel::deserialize(&bytes).unwrap();
        prop_assert_eq!(&back, &packed);
        prop_assert_eq!(back.weight_set(), ws);
        // any strict prefix fails cleanly
        let cut = (seed as usize) % bytes.len();
        prop_assert!(PackedModel::deserialize(&bytes[..cut]).is_err());
    }

    #[test]
    fn garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
        let _ = PackedModel::deserialize(&bytes);
        let mut with_magic = b"SANN\x01\x00".to_vec();
        with_magic.extend_from_slice(&bytes);
        let _ = PackedModel::deserialize(&with_magic);
    }
}
