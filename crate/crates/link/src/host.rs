//! Blocking host client: stop-and-wait requests with retransmission.

use std::io::{self, Read, Write};

use scgnn_core::{Logits, PackedModel, QuantTensor};

use crate::device::digest;
use crate::error::LinkError;
use crate::frame::{Command, Decoder, Frame, NackReason, MAX_PAYLOAD, OVERHEAD_BYTES};
use crate::transport::is_timeout;

/// Model bytes per LOAD_WEIGHTS frame, after the 4-byte offset.
pub const CHUNK_BYTES: usize = MAX_PAYLOAD - 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub requests: u64,
    pub retransmissions: u64,
    pub nacks: u64,
    pub timeouts: u64,
    pub stale: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadReport {
    pub frames: usize,
    pub bytes: usize,
    pub digest: [u8; 32],
}

pub struct HostClient<T> {
    link: T,
    decoder: Decoder,
    seq: u8,
    max_retries: u32,
    stats: ClientStats,
}

impl<T: Read + Write> HostClient<T> {
    /// The transport must have a read timeout for retransmission to work.
    pub fn new(link: T, max_retries: u32) -> Self {
        Self { link, decoder: Decoder::default(), seq: 0, max_retries, stats: ClientStats::default() }
    }

    pub fn stats(&self) -> ClientStats {
        self.stats
    }

    pub fn into_inner(self) -> T {
        self.link
    }

    /// Waits for one frame. `Ok(None)` on timeout.
    fn read_frame(&mut self) -> Result<Option<Frame>, LinkError> {
        let mut buf = [0u8; 4096];
        loop {
            while let Some(item) = self.decoder.next_frame() {
                match item {
                    Ok(f) => return Ok(Some(f)),
                    // a corrupted response is treated like a lost one
                    Err(_) => self.stats.stale += 1,
                }
            }
            match self.link.read(&mut buf) {
                Ok(0) => return Err(LinkError::Closed),
                Ok(n) => self.decoder.push(&buf[..n]),
                Err(e) if is_timeout(&e) => return Ok(None),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Sends one request and returns its non-retryable response. NACKs for
    /// CRC and framing errors and timeouts trigger a line flush and a
    /// retransmission; a sequence NACK adopts the device's expected number.
    pub fn request(&mut self, command: Command, payload: Vec<u8>) -> Result<Frame, LinkError> {
        self.stats.requests += 1;
        let mut attempts = 0u32;
        let mut last = String::from("no attempt");
        let mut resync = false;
        loop {
            if attempts > self.max_retries {
                return Err(LinkError::RetriesExhausted { command: format!("{command:?}"), attempts, last });
            }
            if attempts > 0 {
                self.stats.retransmissions += 1;
                if resync {
                    // zeros never contain a start marker; a full frame's worth
                    // completes whatever the device is still collecting
                    self.link.write_all(&[0u8; MAX_PAYLOAD + OVERHEAD_BYTES])?;
                    resync = false;
                }
            }
            attempts += 1;
            let bytes = Frame::new(command, self.seq, payload.clone()).encode()?;
            self.link.write_all(&bytes)?;
            self.link.flush()?;
            let resp = loop {
                match self.read_frame()? {
                    None => {
                        self.stats.timeouts += 1;
                        break None;
                    }
                    Some(f) if f.seq != self.seq => self.stats.stale += 1,
                    Some(f) => break Some(f),
                }
            };
            let Some(resp) = resp else {
                last = "timeout".into();
                resync = true;
                continue;
            };
            match resp.nack_reason() {
                Some(NackReason::Crc) | Some(NackReason::Framing) => {
                    self.stats.nacks += 1;
                    last = "nack (corrupted request)".into();
                    resync = true;
                }
                Some(NackReason::Sequence) => {
                    self.stats.nacks += 1;
                    last = "nack (sequence)".into();
                    match resp.payload.get(1) {
                        Some(&expected) => self.seq = expected,
                        None => return Err(LinkError::Protocol("sequence NACK without expected seq".into())),
                    }
                }
                Some(reason) => {
                    self.stats.nacks += 1;
                    self.seq = self.seq.wrapping_add(1);
                    return Err(LinkError::Nack { command: format!("{command:?}"), reason });
                }
                None => {
                    self.seq = self.seq.wrapping_add(1);
                    return Ok(resp);
                }
            }
        }
    }

    fn expect_ack(&mut self, command: Command, payload: Vec<u8>) -> Result<Frame, LinkError> {
        let resp = self.request(command, payload)?;
        if resp.command != Command::Ack {
            return Err(LinkError::Protocol(format!("expected ACK to {command:?}, got {:?}", resp.command)));
        }
        Ok(resp)
    }

    /// Streams the serialized model and verifies the device readback digest.
    pub fn load_model(&mut self, model: &PackedModel) -> Result<LoadReport, LinkError> {
        let bytes = model.serialize();
        let mut frames = 0;
        for (i, chunk) in bytes.chunks(CHUNK_BYTES).enumerate() {
            let mut payload = ((i * CHUNK_BYTES) as u32).to_le_bytes().to_vec();
            payload.extend_from_slice(chunk);
            self.expect_ack(Command::LoadWeights, payload)?;
            frames += 1;
        }
        let expected = digest(&bytes);
        self.verify(&expected)?;
        Ok(LoadReport { frames, bytes: bytes.len(), digest: expected })
    }

    /// Asks the device to digest its memory contents and compares.
    pub fn verify(&mut self, expected: &[u8; 32]) -> Result<(), LinkError> {
        let resp = self.expect_ack(Command::VerifyMem, vec![])?;
        if resp.payload.as_slice() != expected {
            return Err(LinkError::Verification {
                expected: hex(expected),
                actual: hex(&resp.payload),
            });
        }
        Ok(())
    }

    pub fn load_input(&mut self, window: &QuantTensor) -> Result<(), LinkError> {
        let mut payload = vec![window.zero_point];
        payload.extend_from_slice(window.data());
        self.expect_ack(Command::LoadInput, payload)?;
        Ok(())
    }

    /// LOAD_INPUT then RUN_INFERENCE; returns logits and device cycles.
    pub fn run(&mut self, window: &QuantTensor) -> Result<(Logits, u32), LinkError> {
        self.load_input(window)?;
        let resp = self.request(Command::RunInference, vec![])?;
        parse_result(&resp)
    }

    pub fn read_result(&mut self) -> Result<(Logits, u32), LinkError> {
        let resp = self.request(Command::ReadResult, vec![])?;
        parse_result(&resp)
    }
}

fn parse_result(resp: &Frame) -> Result<(Logits, u32), LinkError> {
    let p = &resp.payload;
    if resp.command != Command::Result || p.len() < 4 || !p.len().is_multiple_of(4) {
        return Err(LinkError::Protocol(format!("malformed result frame ({:?}, {} bytes)", resp.command, p.len())));
    }
    let words: Vec<[u8; 4]> = p.chunks_exact(4).map(|c| c.try_into().unwrap()).collect();
    let (cycles, logits) = words.split_last().unwrap();
    Ok((
        Logits::new(logits.iter().map(|w| i32::from_le_bytes(*w)).collect()),
        u32::from_le_bytes(*cycles),
    ))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
