//! Per-cycle trace records and sinks.

use std::io::Write;

use serde::Serialize;

use crate::memory::Buffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FsmState {
    Idle,
    Prime,
    Compute,
    Requant,
}

impl std::fmt::Display for FsmState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FsmState::Idle => "idle",
            FsmState::Prime => "prime",
            FsmState::Compute => "compute",
            FsmState::Requant => "requant",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MemOp {
    BiasRead { index: usize },
    WeightFetch { word: u32 },
    InputRead { word: usize },
    ActRead { buffer: Buffer, word: usize },
    ActWrite { buffer: Buffer, word: usize, value: u16 },
    ResultWrite { index: usize, value: i32 },
}

/// One clock of the machine, recorded before the state transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub state: FsmState,
    pub layer: usize,
    pub c_out: usize,
    pub batch: usize,
    pub c_in: usize,
    /// Prime step, kernel tap or requant stage, depending on the state.
    pub k: usize,
    pub mem: Vec<MemOp>,
    pub macs: u8,
}

pub trait TraceSink: Send {
    fn record(&mut self, event: &TraceEvent) -> std::io::Result<()>;
}

/// Writes one JSON object per line.
pub struct NdjsonSink<W: Write> {
    out: W,
}

impl<W: Write> NdjsonSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write + Send> TraceSink for NdjsonSink<W> {
    fn record(&mut self, event: &TraceEvent) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, event)?;
        self.out.write_all(b"\n")
    }
}

/// Collects events in memory.
#[derive(Debug, Default)]
pub struct VecSink {
    pub events: Vec<TraceEvent>,
}

impl TraceSink for VecSink {
    fn record(&mut self, event: &TraceEvent) -> std::io::Result<()> {
        self.events.push(event.clone());
        Ok(())
    }
}
