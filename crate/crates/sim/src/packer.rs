//! Packs consecutive 8-bit results into 16-bit words, low byte first.

/// Two-byte packer with a half-full flag.
#[derive(Debug, Clone, Default)]
pub struct Packer {
    pending: u8,
    half_full: bool,
}

impl Packer {
    /// Accepts one byte; returns a completed word when the pair fills.
    pub fn push(&mut self, byte: u8) -> Option<u16> {
        if self.half_full {
            self.half_full = false;
            Some(((byte as u16) << 8) | self.pending as u16)
        } else {
            self.pending = byte;
            self.half_full = true;
            None
        }
    }

    /// Emits a half-filled word with a zero high byte.
    pub fn flush(&mut self) -> Option<u16> {
        if self.half_full {
            self.half_full = false;
            Some(self.pending as u16)
        } else {
            None
        }
    }

    pub fn half_full(&self) -> bool {
        self.half_full
    }
}

pub fn pack(bytes: &[u8]) -> Vec<u16> {
    let mut p = Packer::default();
    let mut out: Vec<u16> = bytes.iter().filter_map(|&b| p.push(b)).collect();
    out.extend(p.flush());
    out
}

pub fn unpack(words: &[u16], count: usize) -> Vec<u8> {
    words
        .iter()
        .flat_map(|w| [*w as u8, (w >> 8) as u8])
        .take(count)
        .collect()
}
