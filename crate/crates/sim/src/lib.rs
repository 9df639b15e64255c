//! Cycle-accurate functional model of the accelerator datapath.

pub mod error;
pub mod machine;
pub mod memory;
pub mod packer;
pub mod requant;
pub mod trace;

pub use error::{Result, SimError};
pub use machine::{LayerStats, RunResult, SimMachine, SystolicCluster};
pub use memory::{Buffer, MemorySubsystem};
pub use requant::{mul64signed, RequantUnit};
pub use trace::{FsmState, MemOp, NdjsonSink, TraceEvent, TraceSink, VecSink};
