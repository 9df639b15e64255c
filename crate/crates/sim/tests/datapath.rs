use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scgnn_core::qnn::{requantize_logit, requantize_u8};
use scgnn_core::{Activation, RequantParams};
use scgnn_sim::packer::{pack, unpack};
use scgnn_sim::requant::{activate, round_shift};
use scgnn_sim::{mul64signed, RequantUnit};

fn edge_operands() -> Vec<i32> {
    let mut v = vec![0, 1, -1, 1 << 15, -(1 << 15), (1 << 15) - 1, -((1 << 15) - 1)];
    v.extend([i32::MAX, i32::MIN, i32::MIN + 1, i32::MAX - 1, 1 << 16, -(1 << 16), 0xFFFF, -0xFFFF]);
    v
}

#[test]
fn multiplier_edge_cross_product() {
    let edges = edge_operands();
    for &a in &edges {
        for &b in &edges {
            assert_eq!(mul64signed(a, b), a as i64 * b as i64, "{a} * {b}");
        }
    }
}

#[test]
fn multiplier_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4D);
    let mismatches = (0..1_000_000)
        .filter(|_| {
            let (a, b): (i32, i32) = (rng.gen(), rng.gen());
            mul64signed(a, b) != a as i64 * b as i64
        })
        .count();
    assert_eq!(mismatches, 0);
}

#[test]
fn staged_requant_matches_golden() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x52);
    let mut unit = RequantUnit::default();
    for _ in 0..100_000 {
        let acc: i32 = rng.gen();
        let rq = RequantParams::new(rng.gen_range(1 << 30..=i32::MAX), rng.gen_range(0..=63));
        let zp: u8 = rng.gen();
        unit.start(acc, rq);
        while !unit.step() {}
        assert_eq!(unit.finish(rq.shift, Activation::ReluSaturate, zp), requantize_u8(acc, rq, zp) as i32);
        let r = activate(round_shift(mul64signed(acc, rq.multiplier), rq.shift), Activation::SignedBypass, 0);
        assert_eq!(r, requantize_logit(acc, rq));
    }
}

proptest! {
    #[test]
    fn pack_unpack_identity(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
        let words = pack(&bytes);
        prop_assert_eq!(words.len(), bytes.len().div_ceil(2));
        prop_assert_eq!(unpack(&words, bytes.len()), bytes.clone());
        if bytes.len() % 2 == 1 {
            prop_assert_eq!(words.last().unwrap() >> 8, 0);
        }
    }
}
