//! Serial requantizer: a four-step 16-bit partial-product multiplier
//! followed by rounding and activation.

use scgnn_core::{Activation, RequantParams};

use scgnn_core::cycles::MULTIPLIER_STAGES;

/// Splits a signed 32-bit operand into a signed upper half and an unsigned
/// lower half, `v == hi * 2^16 + lo`.
fn halves(v: i32) -> (i64, i64) {
    ((v >> 16) as i64, (v & 0xFFFF) as i64)
}

/// Partial product for one multiplier stage.
fn partial(stage: u8, a: i32, b: i32) -> i64 {
    let (ah, al) = halves(a);
    let (bh, bl) = halves(b);
    match stage {
        0 => al * bl,
        1 => (al * bh) << 16,
        2 => (ah * bl) << 16,
        3 => (ah * bh) << 32,
        _ => unreachable!("multiplier has four stages"),
    }
}

/// Signed 32x32 -> 64 multiply built from the four partial products.
pub fn mul64signed(a: i32, b: i32) -> i64 {
    (0..MULTIPLIER_STAGES as u8).map(|s| partial(s, a, b)).sum()
}

/// Rounding right shift, ties away from zero.
pub fn round_shift(product: i64, shift: u8) -> i64 {
    if shift == 0 {
        return product;
    }
    let half = 1u128 << (shift - 1);
    let mag = ((product.unsigned_abs() as u128 + half) >> shift) as i64;
    if product < 0 {
        -mag
    } else {
        mag
    }
}

/// Final activation. ReLU layers add the output zero point and saturate to
/// u8; the classifier head saturates to i32.
pub fn activate(r: i64, activation: Activation, output_zero_point: u8) -> i32 {
    match activation {
        Activation::ReluSaturate => (r + output_zero_point as i64).clamp(0, 255) as i32,
        Activation::SignedBypass => r.clamp(i32::MIN as i64, i32::MAX as i64) as i32,
    }
}

/// Staged multiplier state.
#[derive(Debug, Clone, Default)]
pub struct RequantUnit {
    operand: i32,
    multiplier: i32,
    stage: u8,
    product_acc: i64,
    busy: bool,
}

impl RequantUnit {
    pub fn start(&mut self, operand: i32, params: RequantParams) {
        self.operand = operand;
        self.multiplier = params.multiplier;
        self.stage = 0;
        self.product_acc = 0;
        self.busy = true;
    }

    /// Advances one multiplier stage; returns true once the product is complete.
    pub fn step(&mut self) -> bool {
        debug_assert!(self.busy && (self.stage as u64) < MULTIPLIER_STAGES);
        self.product_acc += partial(self.stage, self.operand, self.multiplier);
        self.stage += 1;
        self.stage as u64 == MULTIPLIER_STAGES
    }

    pub fn busy(&self) -> bool {
        self.busy
    }

    pub fn stage(&self) -> u8 {
        self.stage
    }

    pub fn product(&self) -> i64 {
        self.product_acc
    }

    pub fn finish(&mut self, shift: u8, activation: Activation, output_zero_point: u8) -> i32 {
        self.busy = false;
        activate(round_shift(self.product_acc, shift), activation, output_zero_point)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn most_negative_operands() {
        assert_eq!(mul64signed(i32::MIN, i32::MIN), 1i64 << 62);
        assert_eq!(mul64signed(i32::MIN, i32::MAX), i32::MIN as i64 * i32::MAX as i64);
        assert_eq!(mul64signed(-1, 1), -1);
    }

    #[test]
    fn staged_unit_matches_combinational() {
        let mut u = RequantUnit::default();
        u.start(-123_456, RequantParams::new(1_500_000_000, 40));
        let mut steps = 1;
        while !u.step() {
            steps += 1;
        }
        assert_eq!(steps, 4);
        assert_eq!(u.product(), -123_456i64 * 1_500_000_000);
        assert!(u.busy());
        let r = u.finish(40, Activation::SignedBypass, 0);
        assert!(!u.busy());
        assert_eq!(r as i64, round_shift(-123_456i64 * 1_500_000_000, 40));
    }

    #[test]
    fn rounding_ties() {
        assert_eq!(round_shift(3, 1), 2);
        assert_eq!(round_shift(-3, 1), -2);
        assert_eq!(round_shift(5, 2), 1);
        assert_eq!(round_shift(6, 2), 2);
        assert_eq!(round_shift(i64::MIN, 63), -1);
    }
}
