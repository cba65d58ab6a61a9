//! IMTN binary tensors.
//!
//! ```text
//! "IMTN"  u8 version (1)  u8 rank  rank x u32 extent  numel x f32
//! ```
//!
//! All integers and floats are little-endian. The encoding is canonical, so
//! decoding and re-encoding reproduces the input bytes.

use std::fs;
use std::path::Path;

use imamba_core::Tensor;

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"IMTN";
pub const VERSION: u8 = 1;

/// Appends the encoding of `t` to `out`.
pub fn encode_into(t: &Tensor<f32>, out: &mut Vec<u8>) -> Result<()> {
    let dims = t.dims();
    let rank = u8::try_from(dims.len())
        .map_err(|_| Error::Malformed { what: "tensor", detail: format!("rank {} exceeds 255", dims.len()) })?;
    out.reserve(6 + 4 * dims.len() + 4 * t.numel());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(rank);
    for &d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::Malformed { what: "tensor", detail: format!("extent {d} exceeds u32") })?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn encode(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_into(t, &mut out)?;
    Ok(out)
}

/// Cursor over an encoded buffer that reports short reads as truncation.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(Error::Truncated { what, needed: n, available });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4], what: &'static str) -> Result<()> {
        let available = self.buf.len() - self.pos;
        let found = &self.buf[self.pos..self.pos + available.min(4)];
        if found != expected {
            if found.len() < 4 && expected.starts_with(found) {
                return Err(Error::Truncated { what, needed: 4, available });
            }
            return Err(Error::BadMagic { expected, found: found.to_vec() });
        }
        self.pos += 4;
        Ok(())
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn tensor(&mut self) -> Result<Tensor<f32>> {
        self.magic(MAGIC, "tensor header")?;
        let version = self.u8("tensor header")?;
        if version != VERSION {
            return Err(Error::Version { format: "IMTN", version });
        }
        let rank = self.u8("tensor header")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32("tensor extents")? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| Error::Malformed { what: "tensor", detail: format!("extents {dims:?} overflow") })?;
        let payload = self.take(numel * 4, "tensor payload")?;
        let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        Ok(Tensor::new(&dims, data)?)
    }
}

/// Decodes exactly one tensor; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = Reader::new(bytes);
    let t = r.tensor()?;
    match r.remaining() {
        0 => Ok(t),
        n => Err(Error::Trailing(n)),
    }
}

pub fn write(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
