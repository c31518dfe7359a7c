//! Little-endian CDR (XCDR1) encoding as used by ROS 2 message payloads.
//!
//! Payloads start with a 4-byte encapsulation header; primitive alignment is
//! measured from the first byte after that header.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CdrError {
    #[error("payload shorter than the encapsulation header")]
    MissingHeader,
    #[error("unsupported CDR encapsulation {0:#06x}")]
    Encapsulation(u16),
    #[error("unexpected end of payload at offset {offset} (wanted {wanted} bytes)")]
    Truncated { offset: usize, wanted: usize },
    #[error("string at offset {0} is not NUL-terminated UTF-8")]
    BadString(usize),
}

const CDR_LE: [u8; 2] = [0x00, 0x01];

pub struct CdrReader<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> CdrReader<'a> {
    pub fn new(payload: &'a [u8]) -> Result<Self, CdrError> {
        if payload.len() < 4 {
            return Err(CdrError::MissingHeader);
        }
        if payload[..2] != CDR_LE {
            return Err(CdrError::Encapsulation(u16::from_be_bytes([payload[0], payload[1]])));
        }
        Ok(Self { body: &payload[4..], pos: 0 })
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    fn align(&mut self, n: usize) {
        let rem = self.pos % n;
        if rem != 0 {
            self.pos += n - rem;
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CdrError> {
        let end = self.pos + n;
        if end > self.body.len() {
            return Err(CdrError::Truncated { offset: self.pos, wanted: n });
        }
        let s = &self.body[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn fixed<const N: usize>(&mut self) -> Result<[u8; N], CdrError> {
        self.align(N);
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CdrError> {
        Ok(self.take(1)?[0])
    }

    pub fn i8(&mut self) -> Result<i8, CdrError> {
        Ok(self.u8()? as i8)
    }

    pub fn bool(&mut self) -> Result<bool, CdrError> {
        Ok(self.u8()? != 0)
    }

    pub fn u16(&mut self) -> Result<u16, CdrError> {
        Ok(u16::from_le_bytes(self.fixed()?))
    }

    pub fn u32(&mut self) -> Result<u32, CdrError> {
        Ok(u32::from_le_bytes(self.fixed()?))
    }

    pub fn i32(&mut self) -> Result<i32, CdrError> {
        Ok(i32::from_le_bytes(self.fixed()?))
    }

    pub fn f64(&mut self) -> Result<f64, CdrError> {
        Ok(f64::from_le_bytes(self.fixed()?))
    }

    pub fn f64_array<const N: usize>(&mut self) -> Result<[f64; N], CdrError> {
        let mut out = [0.0; N];
        for v in &mut out {
            *v = self.f64()?;
        }
        Ok(out)
    }

    pub fn f64_seq(&mut self) -> Result<Vec<f64>, CdrError> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn string(&mut self) -> Result<String, CdrError> {
        let start = self.pos;
        let len = self.u32()? as usize;
        if len == 0 {
            return Ok(String::new());
        }
        let raw = self.take(len)?;
        match raw.split_last() {
            Some((0, s)) => std::str::from_utf8(s).map(str::to_owned).map_err(|_| CdrError::BadString(start)),
            _ => Err(CdrError::BadString(start)),
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CdrError> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

#[derive(Default)]
pub struct CdrWriter {
    body: Vec<u8>,
}

impl CdrWriter {
    pub fn new() -> Self {
        Self::default()
    }

    fn align(&mut self, n: usize) {
        while self.body.len() % n != 0 {
            self.body.push(0);
        }
    }

    pub fn u8(&mut self, v: u8) {
        self.body.push(v);
    }

    pub fn i8(&mut self, v: i8) {
        self.body.push(v as u8);
    }

    pub fn bool(&mut self, v: bool) {
        self.body.push(u8::from(v));
    }

    pub fn u16(&mut self, v: u16) {
        self.align(2);
        self.body.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.align(4);
        self.body.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i32(&mut self, v: i32) {
        self.align(4);
        self.body.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.align(8);
        self.body.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64_slice(&mut self, v: &[f64]) {
        for &x in v {
            self.f64(x);
        }
    }

    pub fn f64_seq(&mut self, v: &[f64]) {
        self.u32(v.len() as u32);
        self.f64_slice(v);
    }

    pub fn string(&mut self, s: &str) {
        self.u32(s.len() as u32 + 1);
        self.body.extend_from_slice(s.as_bytes());
        self.body.push(0);
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.body.extend_from_slice(b);
    }

    /// Payload with the little-endian encapsulation header prepended.
    pub fn finish(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.body.len() + 4);
        out.extend_from_slice(&[0x00, 0x01, 0x00, 0x00]);
        out.extend_from_slice(&self.body);
        out
    }
}
