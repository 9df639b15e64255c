//! On-chip memories: banked weight SRAM, bias ROM, scale registers, the
//! dual-bank input buffer and the ping/pong activation buffers.

use scgnn_core::model::{WEIGHT_BANK_WORDS, WEIGHT_MEM_WORDS};
use scgnn_core::RequantParams;

pub const BIAS_ROM_ENTRIES: usize = 512;
pub const INPUT_BANK_WORDS: usize = 256;
pub const INPUT_BUFFER_WORDS: usize = 2 * INPUT_BANK_WORDS;
pub const ACT_BUFFER_WORDS: usize = 16 * 1024;

/// Ping/pong buffer selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Buffer {
    Ping,
    Pong,
}

impl Buffer {
    fn index(self) -> usize {
        match self {
            Buffer::Ping => 0,
            Buffer::Pong => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MemorySubsystem {
    weight_banks: [Vec<u16>; 2],
    bias_rom: Vec<i32>,
    scale_regs: Vec<RequantParams>,
    input_banks: [Vec<u16>; 2],
    act: [Vec<u16>; 2],
    toggle: bool,
}

impl Default for MemorySubsystem {
    fn default() -> Self {
        Self::new()
    }
}

impl MemorySubsystem {
    pub fn new() -> Self {
        Self {
            weight_banks: [vec![0; WEIGHT_BANK_WORDS], vec![0; WEIGHT_BANK_WORDS]],
            bias_rom: vec![0; BIAS_ROM_ENTRIES],
            scale_regs: Vec::new(),
            input_banks: [vec![0; INPUT_BANK_WORDS], vec![0; INPUT_BANK_WORDS]],
            act: [vec![0; ACT_BUFFER_WORDS], vec![0; ACT_BUFFER_WORDS]],
            toggle: false,
        }
    }

    pub fn clear(&mut self) {
        *self = Self::new();
    }

    /// Word address space is 15 bits; bit 14 selects the bank.
    pub fn read_weight_word(&self, word: u32) -> Result<u16, String> {
        if word as usize >= WEIGHT_MEM_WORDS {
            return Err(format!("weight address {word:#06x} outside the 15-bit space"));
        }
        let bank = ((word >> 14) & 1) as usize;
        Ok(self.weight_banks[bank][(word & 0x3FFF) as usize])
    }

    pub fn write_weight_word(&mut self, word: u32, value: u16) -> Result<(), String> {
        if word as usize >= WEIGHT_MEM_WORDS {
            return Err(format!("weight address {word:#06x} outside the 15-bit space"));
        }
        let bank = ((word >> 14) & 1) as usize;
        self.weight_banks[bank][(word & 0x3FFF) as usize] = value;
        Ok(())
    }

    pub fn weight_bank(&self, bank: usize) -> &[u16] {
        &self.weight_banks[bank]
    }

    pub fn bias(&self, index: usize) -> Result<i32, String> {
        self.bias_rom
            .get(index)
            .copied()
            .ok_or_else(|| format!("bias index {index} outside the {BIAS_ROM_ENTRIES}-entry ROM"))
    }

    pub fn bias_rom(&self) -> &[i32] {
        &self.bias_rom
    }

    pub fn write_biases(&mut self, biases: &[i32]) -> Result<(), String> {
        if biases.len() > BIAS_ROM_ENTRIES {
            return Err(format!("{} biases exceed the {BIAS_ROM_ENTRIES}-entry ROM", biases.len()));
        }
        self.bias_rom[..biases.len()].copy_from_slice(biases);
        Ok(())
    }

    pub fn scale_regs(&self) -> &[RequantParams] {
        &self.scale_regs
    }

    pub fn set_scale_regs(&mut self, regs: Vec<RequantParams>) {
        self.scale_regs = regs;
    }

    /// Even words live in bank 0, odd words in bank 1.
    pub fn read_input_word(&self, word: usize) -> Result<u16, String> {
        if word >= INPUT_BUFFER_WORDS {
            return Err(format!("input word {word} outside the {INPUT_BUFFER_WORDS}-word buffer"));
        }
        Ok(self.input_banks[word & 1][word >> 1])
    }

    pub fn write_input_word(&mut self, word: usize, value: u16) -> Result<(), String> {
        if word >= INPUT_BUFFER_WORDS {
            return Err(format!("input word {word} outside the {INPUT_BUFFER_WORDS}-word buffer"));
        }
        self.input_banks[word & 1][word >> 1] = value;
        Ok(())
    }

    pub fn input_bank(&self, bank: usize) -> &[u16] {
        &self.input_banks[bank]
    }

    /// Buffer written by the current layer.
    pub fn write_buffer(&self) -> Buffer {
        if self.toggle {
            Buffer::Pong
        } else {
            Buffer::Ping
        }
    }

    /// Buffer read by the current layer.
    pub fn read_buffer(&self) -> Buffer {
        if self.toggle {
            Buffer::Ping
        } else {
            Buffer::Pong
        }
    }

    pub fn swap_buffers(&mut self) {
        self.toggle = !self.toggle;
    }

    pub fn reset_toggle(&mut self) {
        self.toggle = false;
    }

    pub fn read_act(&self, buffer: Buffer, word: usize) -> Result<u16, String> {
        if buffer == self.write_buffer() {
            return Err(format!("read of {buffer:?} while it is the active write buffer"));
        }
        self.act[buffer.index()]
            .get(word)
            .copied()
            .ok_or_else(|| format!("activation word {word} outside the {ACT_BUFFER_WORDS}-word buffer"))
    }

    pub fn write_act(&mut self, buffer: Buffer, word: usize, value: u16) -> Result<(), String> {
        if buffer == self.read_buffer() {
            return Err(format!("write to {buffer:?} while it is the active read buffer"));
        }
        let slot = self.act[buffer.index()]
            .get_mut(word)
            .ok_or_else(|| format!("activation word {word} outside the {ACT_BUFFER_WORDS}-word buffer"))?;
        *slot = value;
        Ok(())
    }

    pub fn act_buffer(&self, buffer: Buffer) -> &[u16] {
        &self.act[buffer.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_bank_select_is_bit_14() {
        let mut m = MemorySubsystem::new();
        m.write_weight_word(0x3FFF, 1).unwrap();
        m.write_weight_word(0x4000, 2).unwrap();
        assert_eq!(m.weight_bank(0)[0x3FFF], 1);
        assert_eq!(m.weight_bank(1)[0], 2);
        assert!(m.read_weight_word(0x8000).is_err());
        assert!(m.write_weight_word(0x8000, 0).is_err());
    }

    #[test]
    fn input_words_interleave_banks() {
        let mut m = MemorySubsystem::new();
        for w in 0..INPUT_BUFFER_WORDS {
            m.write_input_word(w, w as u16).unwrap();
        }
        assert_eq!(m.input_bank(0)[3], 6);
        assert_eq!(m.input_bank(1)[3], 7);
        assert_eq!(m.read_input_word(511).unwrap(), 511);
        assert!(m.read_input_word(512).is_err());
    }

    #[test]
    fn ping_pong_ownership() {
        let mut m = MemorySubsystem::new();
        let w = m.write_buffer();
        let r = m.read_buffer();
        assert_ne!(w, r);
        m.write_act(w, 5, 0xBEEF).unwrap();
        assert!(m.read_act(w, 5).is_err());
        assert!(m.write_act(r, 0, 0).is_err());
        m.swap_buffers();
        assert_eq!(m.read_act(w, 5).unwrap(), 0xBEEF);
        assert!(m.read_act(w, ACT_BUFFER_WORDS).is_err());
    }

    #[test]
    fn bias_rom_capacity() {
        let mut m = MemorySubsystem::new();
        assert!(m.write_biases(&vec![1; BIAS_ROM_ENTRIES + 1]).is_err());
        m.write_biases(&[7, 8]).unwrap();
        assert_eq!(m.bias(1).unwrap(), 8);
        assert!(m.bias(BIAS_ROM_ENTRIES).is_err());
    }
}
