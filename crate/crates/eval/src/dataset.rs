//! File formats for windows and labeled datasets.
//!
//! Dataset (`.scgd`), little-endian:
//!
//! | offset | size | field |
//! |--------|------|-------|
//! | 0 | 4 | magic `"SCGD"` |
//! | 4 | 2 | version (1) |
//! | 6 | 4 | window count `n` |
//! | 10 | 4 | samples per window `w` |
//! | 14 | n·(1 + 4w) | per window: label u8, then `w` f32 samples |
//!
//! Raw signal files hold bare f32 LE samples; quantized files hold one u8
//! per sample.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{EvalError, Result};
use crate::synth::LabeledWindowSet;

pub const DATASET_MAGIC: [u8; 4] = *b"SCGD";
pub const DATASET_VERSION: u16 = 1;
const DATASET_HEADER: usize = 14;

pub fn encode_dataset(set: &LabeledWindowSet) -> Vec<u8> {
    let w = set.window_length();
    let mut out = Vec::with_capacity(DATASET_HEADER + set.len() * (1 + 4 * w));
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for (window, &label) in set.windows.iter().zip(&set.labels) {
        out.push(label);
        for s in window {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledWindowSet> {
    if bytes.len() < DATASET_HEADER {
        return Err(EvalError::Format(format!("dataset header needs {DATASET_HEADER} bytes, got {}", bytes.len())));
    }
    if bytes[..4] != DATASET_MAGIC {
        return Err(EvalError::Format(format!("bad dataset magic {:?}", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != DATASET_VERSION {
        return Err(EvalError::Format(format!("unsupported dataset version {version}")));
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let record = 1 + 4 * w;
    let expected = n
        .checked_mul(record)
        .and_then(|b| b.checked_add(DATASET_HEADER))
        .ok_or_else(|| EvalError::Format("dataset dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(EvalError::Format(format!(
            "dataset of {n} windows x {w} samples needs {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let mut windows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes[DATASET_HEADER..].chunks_exact(record) {
        labels.push(rec[0]);
        windows.push(
            rec[1..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    LabeledWindowSet::new(windows, labels)
}

pub fn write_dataset(path: &Path, set: &LabeledWindowSet) -> Result<()> {
    std::fs::write(path, encode_dataset(set))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<LabeledWindowSet> {
    decode_dataset(&std::fs::read(path)?)
}

pub fn encode_signal_f32(samples: &[f32]) -> Vec<u8> {
    samples.iter().flat_map(|s| s.to_le_bytes()).collect()
}

pub fn decode_signal_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(EvalError::Format(format!(
            "raw signal length {} is not a multiple of 4 bytes",
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Reads a whole signal from a path, or from standard input for `-`.
pub fn read_bytes(path: &str) -> Result<Vec<u8>> {
    if path == "-" {
        let mut buf = Vec::new();
        std::io::stdin().lock().read_to_end(&mut buf)?;
        Ok(buf)
    } else {
        Ok(std::fs::read(path)?)
    }
}

/// Writes to a path, or to standard output for `-`.
pub fn write_bytes(path: &str, bytes: &[u8]) -> Result<()> {
    if path == "-" {
        let mut out = std::io::stdout().lock();
        out.write_all(bytes)?;
        out.flush()?;
    } else {
        std::fs::write(path, bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let set = LabeledWindowSet::new(vec![vec![1.5, -2.0, 0.25], vec![0.0, 3.0, -1.0]], vec![2, 0]).unwrap();
        let bytes = encode_dataset(&set);
        assert_eq!(bytes.len(), 14 + 2 * 13);
        assert_eq!(decode_dataset(&bytes).unwrap(), set);
        assert!(decode_dataset(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_dataset(&bad).is_err());
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let set = LabeledWindowSet { windows: vec![vec![0.0]], labels: vec![3] };
        assert!(decode_dataset(&encode_dataset(&set)).is_err());
    }

    #[test]
    fn signal_round_trip() {
        let s = vec![0.5f32, -1.0, 7.25];
        assert_eq!(decode_signal_f32(&encode_signal_f32(&s)).unwrap(), s);
        assert!(decode_signal_f32(&[0, 0, 0]).is_err());
    }
}
