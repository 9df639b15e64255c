//! Wire frames: `A5 | cmd | seq | len (u16 LE) | payload | crc8(cmd..payload)`.

use crate::crc::crc8;

pub const SOF: u8 = 0xA5;
pub const MAX_PAYLOAD: usize = 4096;
pub const HEADER_BYTES: usize = 5;
/// SOF, command, sequence, two length bytes and the CRC.
pub const OVERHEAD_BYTES: usize = HEADER_BYTES + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    LoadWeights,
    VerifyMem,
    RunInference,
    LoadInput,
    ReadResult,
    Ack,
    Nack,
    Result,
    Unknown(u8),
}

impl Command {
    pub fn code(self) -> u8 {
        match self {
            Command::LoadWeights => 0x01,
            Command::VerifyMem => 0x02,
            Command::RunInference => 0x03,
            Command::LoadInput => 0x04,
            Command::ReadResult => 0x05,
            Command::Ack => 0x80,
            Command::Nack => 0x81,
            Command::Result => 0x82,
            Command::Unknown(c) => c,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code {
            0x01 => Command::LoadWeights,
            0x02 => Command::VerifyMem,
            0x03 => Command::RunInference,
            0x04 => Command::LoadInput,
            0x05 => Command::ReadResult,
            0x80 => Command::Ack,
            0x81 => Command::Nack,
            0x82 => Command::Result,
            c => Command::Unknown(c),
        }
    }
}

/// Reason byte carried as the first payload byte of a NACK.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NackReason {
    Crc,
    Sequence,
    UnknownCommand,
    Busy,
    NoModel,
    NoInput,
    BadPayload,
    ModelInvalid,
    Framing,
    Fault,
    NoResult,
    Other(u8),
}

impl NackReason {
    pub fn code(self) -> u8 {
        match self {
            NackReason::Crc => 1,
            NackReason::Sequence => 2,
            NackReason::UnknownCommand => 3,
            NackReason::Busy => 4,
            NackReason::NoModel => 5,
            NackReason::NoInput => 6,
            NackReason::BadPayload => 7,
            NackReason::ModelInvalid => 8,
            NackReason::Framing => 9,
            NackReason::Fault => 10,
            NackReason::NoResult => 11,
            NackReason::Other(c) => c,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code {
            1 => NackReason::Crc,
            2 => NackReason::Sequence,
            3 => NackReason::UnknownCommand,
            4 => NackReason::Busy,
            5 => NackReason::NoModel,
            6 => NackReason::NoInput,
            7 => NackReason::BadPayload,
            8 => NackReason::ModelInvalid,
            9 => NackReason::Framing,
            10 => NackReason::Fault,
            11 => NackReason::NoResult,
            c => NackReason::Other(c),
        }
    }
}

impl std::fmt::Display for NackReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NackReason::Crc => f.write_str("crc"),
            NackReason::Sequence => f.write_str("sequence"),
            NackReason::UnknownCommand => f.write_str("unknown command"),
            NackReason::Busy => f.write_str("busy"),
            NackReason::NoModel => f.write_str("no model"),
            NackReason::NoInput => f.write_str("no input"),
            NackReason::BadPayload => f.write_str("bad payload"),
            NackReason::ModelInvalid => f.write_str("model invalid"),
            NackReason::Framing => f.write_str("framing"),
            NackReason::Fault => f.write_str("fault"),
            NackReason::NoResult => f.write_str("no result"),
            NackReason::Other(c) => write!(f, "reason {c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub command: Command,
    pub seq: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(command: Command, seq: u8, payload: Vec<u8>) -> Self {
        Self { command, seq, payload }
    }

    pub fn nack(seq: u8, reason: NackReason) -> Self {
        Self::new(Command::Nack, seq, vec![reason.code()])
    }

    pub fn nack_reason(&self) -> Option<NackReason> {
        match self.command {
            Command::Nack => self.payload.first().map(|&c| NackReason::from_code(c)),
            _ => None,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(FrameError::Oversize(self.payload.len()));
        }
        let mut out = Vec::with_capacity(self.payload.len() + OVERHEAD_BYTES);
        out.push(SOF);
        out.push(self.command.code());
        out.push(self.seq);
        out.extend_from_slice(&(self.payload.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out.push(crc8(&out[1..]));
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("crc mismatch on frame seq {seq}: expected {expected:#04x}, got {actual:#04x}")]
    Crc { seq: u8, expected: u8, actual: u8 },
    #[error("payload length {0} exceeds {MAX_PAYLOAD}")]
    Oversize(usize),
    #[error("header of frame seq {seq} declares {len} payload bytes, limit {MAX_PAYLOAD}")]
    BadLength { seq: u8, len: usize },
    #[error("no complete frame in the input")]
    Incomplete,
}

/// Decodes a single complete frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    let mut d = Decoder::default();
    d.push(bytes);
    match d.next_frame() {
        Some(r) => r,
        None => Err(FrameError::Incomplete),
    }
}

/// Streaming decoder. Bytes before a start-of-frame marker are skipped; an
/// oversize length drops the marker and rescans; a CRC failure discards the
/// whole claimed frame.
#[derive(Debug, Default)]
pub struct Decoder {
    buf: Vec<u8>,
    skipped: u64,
}

impl Decoder {
    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes discarded while hunting for a start-of-frame marker.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }

    pub fn next_frame(&mut self) -> Option<Result<Frame, FrameError>> {
        match self.buf.iter().position(|&b| b == SOF) {
            Some(0) => {}
            Some(n) => {
                self.skipped += n as u64;
                self.buf.drain(..n);
            }
            None => {
                self.skipped += self.buf.len() as u64;
                self.buf.clear();
                return None;
            }
        }
        if self.buf.len() < HEADER_BYTES {
            return None;
        }
        let len = u16::from_le_bytes([self.buf[3], self.buf[4]]) as usize;
        if len > MAX_PAYLOAD {
            let seq = self.buf[2];
            self.buf.drain(..1);
            return Some(Err(FrameError::BadLength { seq, len }));
        }
        let total = len + OVERHEAD_BYTES;
        if self.buf.len() < total {
            return None;
        }
        let frame: Vec<u8> = self.buf.drain(..total).collect();
        let expected = crc8(&frame[1..total - 1]);
        let actual = frame[total - 1];
        if expected != actual {
            return Some(Err(FrameError::Crc { seq: frame[2], expected, actual }));
        }
        Some(Ok(Frame {
            command: Command::from_code(frame[1]),
            seq: frame[2],
            payload: frame[HEADER_BYTES..total - 1].to_vec(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_ack_is_six_bytes() {
        let bytes = Frame::new(Command::Ack, 7, vec![]).encode().unwrap();
        assert_eq!(bytes.len(), 6);
        assert_eq!(&bytes[..5], &[SOF, 0x80, 7, 0, 0]);
        assert_eq!(decode_frame(&bytes).unwrap(), Frame::new(Command::Ack, 7, vec![]));
    }

    #[test]
    fn bit_flip_is_crc_error() {
        let mut bytes = Frame::new(Command::LoadInput, 1, vec![1, 2, 3]).encode().unwrap();
        bytes[6] ^= 0x10;
        assert!(matches!(decode_frame(&bytes), Err(FrameError::Crc { .. })));
    }

    #[test]
    fn oversize_is_rejected() {
        assert!(Frame::new(Command::Ack, 0, vec![0; MAX_PAYLOAD + 1]).encode().is_err());
        let mut d = Decoder::default();
        d.push(&[SOF, 1, 0, 0x01, 0x10]);
        assert_eq!(d.next_frame(), Some(Err(FrameError::BadLength { seq: 0, len: 0x1001 })));
        assert_eq!(d.next_frame(), None);
    }

    #[test]
    fn resync_after_garbage() {
        let good = Frame::new(Command::RunInference, 3, vec![]).encode().unwrap();
        let mut d = Decoder::default();
        d.push(&[0, 1, 2, 0xFF]);
        d.push(&good[..3]);
        assert_eq!(d.next_frame(), None);
        d.push(&good[3..]);
        assert_eq!(d.next_frame(), Some(Ok(Frame::new(Command::RunInference, 3, vec![]))));
        assert_eq!(d.skipped(), 4);
    }

    #[test]
    fn command_codes_round_trip() {
        for code in 0..=255u8 {
            assert_eq!(Command::from_code(code).code(), code);
            assert_eq!(NackReason::from_code(code).code(), code);
        }
    }
}
