//! Device emulator: the command arbiter wrapped around a simulated machine.

use std::io::{self, Read, Write};

use scgnn_core::{Logits, PackedModel, QuantTensor};
use scgnn_sim::SimMachine;
use sha2::{Digest, Sha256};

use crate::frame::{Command, Decoder, Frame, FrameError, NackReason};
use crate::transport::is_timeout;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Idle,
    Loading,
    Verifying,
    Running,
}

pub fn digest(bytes: &[u8]) -> [u8; 32] {
    let mut out = [0u8; 32];
    out.copy_from_slice(&Sha256::digest(bytes));
    out
}

/// Counters of one served session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionStats {
    pub frames: u64,
    pub responses: u64,
    pub crc_errors: u64,
    pub framing_errors: u64,
    pub duplicates: u64,
}

pub struct Device {
    machine: SimMachine,
    mode: Mode,
    load_buffer: Vec<u8>,
    last_result: Option<(Logits, u64)>,
    expected_seq: u8,
    cached: Option<(u8, Frame)>,
}

impl Default for Device {
    fn default() -> Self {
        Self::new(SimMachine::default())
    }
}

impl Device {
    pub fn new(machine: SimMachine) -> Self {
        Self {
            machine,
            mode: Mode::Idle,
            load_buffer: Vec::new(),
            last_result: None,
            expected_seq: 0,
            cached: None,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn machine(&self) -> &SimMachine {
        &self.machine
    }

    pub fn machine_mut(&mut self) -> &mut SimMachine {
        &mut self.machine
    }

    pub fn expected_seq(&self) -> u8 {
        self.expected_seq
    }

    /// Resets per-session state; the loaded model survives.
    pub fn begin_session(&mut self) {
        self.expected_seq = 0;
        self.cached = None;
        self.end_session();
    }

    /// Abandons a partial load and returns to idle.
    pub fn end_session(&mut self) {
        self.load_buffer.clear();
        self.mode = Mode::Idle;
    }

    /// Response to a decode failure.
    pub fn on_error(&mut self, err: &FrameError) -> Frame {
        match err {
            FrameError::Crc { seq, .. } => Frame::nack(*seq, NackReason::Crc),
            FrameError::BadLength { seq, .. } => Frame::nack(*seq, NackReason::Framing),
            _ => Frame::nack(self.expected_seq, NackReason::Framing),
        }
    }

    /// Handles one well-formed request and returns exactly one response.
    pub fn handle(&mut self, req: &Frame) -> Frame {
        if req.seq != self.expected_seq {
            if let Some((seq, resp)) = &self.cached {
                if *seq == req.seq {
                    return resp.clone();
                }
            }
            return Frame::new(
                Command::Nack,
                req.seq,
                vec![NackReason::Sequence.code(), self.expected_seq],
            );
        }
        let resp = self.execute(req);
        self.expected_seq = self.expected_seq.wrapping_add(1);
        self.cached = Some((req.seq, resp.clone()));
        resp
    }

    fn execute(&mut self, req: &Frame) -> Frame {
        let seq = req.seq;
        let nack = |r| Frame::nack(seq, r);
        match req.command {
            Command::LoadWeights => {
                if req.payload.len() < 4 {
                    return nack(NackReason::BadPayload);
                }
                let offset = u32::from_le_bytes(req.payload[..4].try_into().unwrap()) as usize;
                if offset == 0 {
                    self.load_buffer.clear();
                    self.mode = Mode::Loading;
                } else if self.mode != Mode::Loading || offset != self.load_buffer.len() {
                    return nack(NackReason::BadPayload);
                }
                self.load_buffer.extend_from_slice(&req.payload[4..]);
                Frame::new(Command::Ack, seq, vec![])
            }
            Command::VerifyMem => {
                if self.mode == Mode::Loading {
                    let bytes = std::mem::take(&mut self.load_buffer);
                    self.mode = Mode::Idle;
                    let model = match PackedModel::deserialize(&bytes) {
                        Ok(m) => m,
                        Err(_) => return nack(NackReason::ModelInvalid),
                    };
                    if self.machine.load_model(&model).is_err() {
                        return nack(NackReason::ModelInvalid);
                    }
                    self.last_result = None;
                }
                self.mode = Mode::Verifying;
                let readback = self.machine.readback_model();
                self.mode = Mode::Idle;
                match readback {
                    Ok(model) => Frame::new(Command::Ack, seq, digest(&model.serialize()).to_vec()),
                    Err(_) => nack(NackReason::NoModel),
                }
            }
            Command::LoadInput => {
                if self.mode == Mode::Loading {
                    return nack(NackReason::Busy);
                }
                let Some(net) = self.machine.network() else {
                    return nack(NackReason::NoModel);
                };
                let Some((&zp, samples)) = req.payload.split_first() else {
                    return nack(NackReason::BadPayload);
                };
                let c_in = net.layers[0].c_in;
                if samples.len() != c_in * net.input_length {
                    return nack(NackReason::BadPayload);
                }
                let tensor = match QuantTensor::new(c_in, net.input_length, samples.to_vec(), 1.0, zp) {
                    Ok(t) => t,
                    Err(_) => return nack(NackReason::BadPayload),
                };
                match self.machine.load_input(&tensor) {
                    Ok(()) => Frame::new(Command::Ack, seq, vec![]),
                    Err(_) => nack(NackReason::BadPayload),
                }
            }
            Command::RunInference => {
                if self.mode == Mode::Loading {
                    return nack(NackReason::Busy);
                }
                if self.machine.network().is_none() {
                    return nack(NackReason::NoModel);
                }
                if !self.machine.has_input() {
                    return nack(NackReason::NoInput);
                }
                self.mode = Mode::Running;
                let run = self.machine.run_inference();
                self.mode = Mode::Idle;
                match run {
                    Ok(r) => {
                        self.last_result = Some((r.logits, r.cycles));
                        self.result_frame(seq)
                    }
                    Err(_) => nack(NackReason::Fault),
                }
            }
            Command::ReadResult => match self.last_result {
                Some(_) => self.result_frame(seq),
                None => nack(NackReason::NoResult),
            },
            Command::Ack | Command::Nack | Command::Result | Command::Unknown(_) => {
                nack(NackReason::UnknownCommand)
            }
        }
    }

    fn result_frame(&self, seq: u8) -> Frame {
        let (logits, cycles) = self.last_result.as_ref().expect("result present");
        let mut payload: Vec<u8> = logits.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        payload.extend_from_slice(&(*cycles as u32).to_le_bytes());
        Frame::new(Command::Result, seq, payload)
    }

    /// Serves one session until the peer closes the stream.
    pub fn serve<T: Read + Write>(&mut self, mut link: T) -> io::Result<SessionStats> {
        self.begin_session();
        let mut stats = SessionStats::default();
        let mut decoder = Decoder::default();
        let mut buf = vec![0u8; 8192];
        let result = loop {
            let n = match link.read(&mut buf) {
                Ok(0) => break Ok(()),
                Ok(n) => n,
                Err(e) if is_timeout(&e) || e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => break Err(e),
            };
            decoder.push(&buf[..n]);
            let mut failed = None;
            while let Some(item) = decoder.next_frame() {
                let resp = match item {
                    Ok(frame) => {
                        stats.frames += 1;
                        if frame.seq != self.expected_seq
                            && self.cached.as_ref().is_some_and(|(s, _)| *s == frame.seq)
                        {
                            stats.duplicates += 1;
                        }
                        self.handle(&frame)
                    }
                    Err(e) => {
                        match e {
                            FrameError::Crc { .. } => stats.crc_errors += 1,
                            _ => stats.framing_errors += 1,
                        }
                        self.on_error(&e)
                    }
                };
                let bytes = resp.encode().expect("responses fit one frame");
                if let Err(e) = link.write_all(&bytes).and_then(|_| link.flush()) {
                    failed = Some(e);
                    break;
                }
                stats.responses += 1;
            }
            if let Some(e) = failed {
                break Err(e);
            }
        };
        self.end_session();
        match result {
            Ok(()) => Ok(stats),
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(stats),
            Err(e) => Err(e),
        }
    }
}
