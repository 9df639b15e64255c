//! Byte-stream transports: an in-memory duplex pair, TCP, stdio and a
//! bit-flipping fault injector.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

/// A bidirectional byte stream. Reads that time out fail with
/// `TimedOut` or `WouldBlock`; a closed peer reads as `Ok(0)`.
pub trait Transport: Read + Write + Send {}

impl<T: Read + Write + Send> Transport for T {}

pub fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock)
}

/// One end of an in-memory duplex link.
#[derive(Debug)]
pub struct MemEnd {
    tx: Option<Sender<Vec<u8>>>,
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    timeout: Option<Duration>,
}

/// Two connected ends; writes on one are read on the other.
pub fn mem_pair(timeout: Option<Duration>) -> (MemEnd, MemEnd) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    (
        MemEnd { tx: Some(a_tx), rx: a_rx, pending: Vec::new(), timeout },
        MemEnd { tx: Some(b_tx), rx: b_rx, pending: Vec::new(), timeout },
    )
}

impl MemEnd {
    pub fn set_timeout(&mut self, timeout: Option<Duration>) {
        self.timeout = timeout;
    }

    /// Closes the sending direction; the peer then reads end-of-stream.
    pub fn close(&mut self) {
        self.tx = None;
    }
}

impl Read for MemEnd {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.pending.is_empty() {
            let chunk = match self.timeout {
                Some(t) => match self.rx.recv_timeout(t) {
                    Ok(c) => c,
                    Err(RecvTimeoutError::Timeout) => {
                        return Err(io::Error::new(io::ErrorKind::TimedOut, "read timed out"))
                    }
                    Err(RecvTimeoutError::Disconnected) => return Ok(0),
                },
                None => match self.rx.recv() {
                    Ok(c) => c,
                    Err(_) => return Ok(0),
                },
            };
            self.pending = chunk;
        }
        let n = buf.len().min(self.pending.len());
        buf[..n].copy_from_slice(&self.pending[..n]);
        self.pending.drain(..n);
        Ok(n)
    }
}

impl Write for MemEnd {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let tx = self
            .tx
            .as_ref()
            .ok_or_else(|| io::Error::new(io::ErrorKind::BrokenPipe, "link closed"))?;
        if buf.is_empty() {
            return Ok(0);
        }
        tx.send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer dropped"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

pub fn tcp_connect(addr: &str, timeout: Option<Duration>) -> io::Result<TcpStream> {
    let s = TcpStream::connect(addr)?;
    s.set_read_timeout(timeout)?;
    s.set_nodelay(true)?;
    Ok(s)
}

/// Standard input and output as one stream.
#[derive(Debug, Default)]
pub struct Stdio;

impl Read for Stdio {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        io::stdin().lock().read(buf)
    }
}

impl Write for Stdio {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stdout().lock().write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        io::stdout().lock().flush()
    }
}

/// Flips one bit of the `nth` (0-based) write call.
#[derive(Debug)]
pub struct FaultInjector<T> {
    inner: T,
    nth: usize,
    byte: usize,
    bit: u8,
    writes: usize,
}

impl<T> FaultInjector<T> {
    /// `byte` is clamped to the length of the chosen write.
    pub fn new(inner: T, nth: usize, byte: usize, bit: u8) -> Self {
        Self { inner, nth, byte, bit: bit % 8, writes: 0 }
    }

    pub fn writes(&self) -> usize {
        self.writes
    }

    pub fn into_inner(self) -> T {
        self.inner
    }
}

impl<T: Read> Read for FaultInjector<T> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.inner.read(buf)
    }
}

impl<T: Write> Write for FaultInjector<T> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let index = self.writes;
        self.writes += 1;
        if index == self.nth && !buf.is_empty() {
            let mut corrupted = buf.to_vec();
            let at = self.byte.min(buf.len() - 1);
            corrupted[at] ^= 1 << self.bit;
            self.inner.write_all(&corrupted)?;
            return Ok(buf.len());
        }
        self.inner.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mem_pair_round_trip_and_close() {
        let (mut a, mut b) = mem_pair(Some(Duration::from_millis(20)));
        a.write_all(b"hello").unwrap();
        let mut buf = [0u8; 3];
        assert_eq!(b.read(&mut buf).unwrap(), 3);
        assert_eq!(&buf, b"hel");
        assert_eq!(b.read(&mut buf).unwrap(), 2);
        assert!(is_timeout(&b.read(&mut buf).unwrap_err()));
        a.close();
        assert_eq!(b.read(&mut buf).unwrap(), 0);
        assert!(a.write(b"x").is_err());
    }

    #[test]
    fn injector_flips_one_bit() {
        let (a, mut b) = mem_pair(None);
        let mut f = FaultInjector::new(a, 1, 2, 3);
        f.write_all(&[0, 0, 0]).unwrap();
        f.write_all(&[0, 0, 0]).unwrap();
        f.write_all(&[0, 0, 0]).unwrap();
        let mut buf = [0u8; 9];
        b.read_exact(&mut buf).unwrap();
        assert_eq!(buf, [0, 0, 0, 0, 0, 8, 0, 0, 0]);
    }
}
