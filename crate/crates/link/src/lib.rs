//! Framed host/device protocol for loading, verifying and running models on
//! the accelerator, with an emulated device.

pub mod crc;
pub mod device;
pub mod error;
pub mod frame;
pub mod host;
pub mod transport;

pub use device::{digest, Device, Mode, SessionStats};
pub use error::LinkError;
pub use frame::{decode_frame, Command, Decoder, Frame, FrameError, NackReason};
pub use host::{ClientStats, HostClient, LoadReport, CHUNK_BYTES};
pub use transport::{mem_pair, tcp_connect, FaultInjector, MemEnd, Stdio, Transport};
