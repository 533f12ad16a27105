//! Canonical binary layout shared by every signed structure.
//!
//! Fixed field order, length-prefixed byte strings, 64-bit big-endian
//! integers. Every structure that gets signed serializes through this module,
//! so signing bytes are identical across replicas and across runs. The field
//! orders themselves are documented in `docs/wire-format.md`.

use thiserror::Error;

/// Cap on any single length-prefixed field. Nothing in the simulator comes
/// close; this bounds allocations when parsing hostile bytes.
const MAX_FIELD_LEN: u64 = 1 << 28;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated input at byte {0}")]
    Truncated(usize),
    #[error("malformed field at byte {offset}: {what}")]
    Malformed { offset: usize, what: &'static str },
    #[error("{0} trailing bytes after structure")]
    TrailingBytes(usize),
}

#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(mut self, v: u8) -> Self {
        self.buf.push(v);
        self
    }

    pub fn u16(mut self, v: u16) -> Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    /// Fixed-width field; the width is part of the format, not the stream.
    pub fn raw(mut self, bytes: &[u8]) -> Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    /// u64 big-endian length prefix followed by the bytes.
    pub fn bytes(mut self, bytes: &[u8]) -> Self {
        self.buf.extend_from_slice(&(bytes.len() as u64).to_be_bytes());
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn text(self, s: &str) -> Self {
        self.bytes(s.as_bytes())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.remaining() < n {
            return Err(WireError::Truncated(self.pos));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().unwrap()))
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        self.take(n)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, WireError> {
        let at = self.pos;
        let len = self.u64()?;
        if len > MAX_FIELD_LEN {
            return Err(WireError::Malformed { offset: at, what: "length out of range" });
        }
        Ok(self.take(len as usize)?.to_vec())
    }

    pub fn text(&mut self) -> Result<String, WireError> {
        let at = self.pos;
        let raw = self.bytes()?;
        String::from_utf8(raw).map_err(|_| WireError::Malformed { offset: at, what: "invalid utf-8" })
    }

    /// The structure must consume the input exactly.
    pub fn finish(self) -> Result<(), WireError> {
        if self.remaining() != 0 {
            return Err(WireError::TrailingBytes(self.remaining()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_mixed_fields() {
        let buf = Encoder::new()
            .u8(7)
            .u16(0x0102)
            .u64(0x0a0b0c0d0e0f1011)
            .bytes(b"hello")
            .text("world")
            .raw(&[0xff; 4])
            .finish();
        let mut d = Decoder::new(&buf);
        assert_eq!(d.u8().unwrap(), 7);
        assert_eq!(d.u16().unwrap(), 0x0102);
        assert_eq!(d.u64().unwrap(), 0x0a0b0c0d0e0f1011);
        assert_eq!(d.bytes().unwrap(), b"hello");
        assert_eq!(d.text().unwrap(), "world");
        assert_eq!(d.raw(4).unwrap(), &[0xff; 4]);
        d.finish().unwrap();
    }

    #[test]
    fn truncation_reports_offset() {
        let buf = Encoder::new().u64(5).finish(); // length prefix with no payload
        let mut d = Decoder::new(&buf);
        assert_eq!(d.bytes().unwrap_err(), WireError::Truncated(8));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let buf = Encoder::new().u8(1).u8(2).finish();
        let mut d = Decoder::new(&buf);
        d.u8().unwrap();
        assert_eq!(d.finish().unwrap_err(), WireError::TrailingBytes(1));
    }
}
