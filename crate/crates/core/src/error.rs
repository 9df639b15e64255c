use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A 32-bit accumulator would have overflowed.
    #[error("accumulator overflow in {stage} at channel {channel}, position {position}")]
    Overflow {
        stage: &'static str,
        channel: usize,
        position: usize,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("weight memory capacity exceeded by layer {layer}: needs {needed} bytes, {available} available")]
    Capacity {
        layer: usize,
        needed: usize,
        available: usize,
    },

    #[error("bad magic: expected \"SANN\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("stream truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("malformed model image: {0}")]
    Malformed(String),
}
