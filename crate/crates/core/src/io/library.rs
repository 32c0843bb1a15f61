//! Binary persistence of basis libraries.
//!
//! Layout, little-endian: `"NTFL"`, `u16` version, `u32` block count, then
//! per block a `u32`-length-prefixed UTF-8 label, `u32` bins, `u32` K and
//! the row-major `f64` entries. A CRC-32 of everything before it closes the
//! file.

use std::path::Path;

use crate::betafac::NonnegMatrix;
use crate::error::{Error, Result};
use crate::priors::{BasisLibrary, SpectralBasis};

pub const MAGIC: &[u8; 4] = b"NTFL";
pub const VERSION: u16 = 1;
const COLUMN_TOL: f64 = 1e-6;

pub fn encode_library(lib: &BasisLibrary) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(lib.len() as u32).to_le_bytes());
    for b in lib.blocks() {
        out.extend_from_slice(&(b.label.len() as u32).to_le_bytes());
        out.extend_from_slice(b.label.as_bytes());
        out.extend_from_slice(&(b.bins() as u32).to_le_bytes());
        out.extend_from_slice(&(b.k() as u32).to_le_bytes());
        for v in b.matrix().as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Library(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_library(bytes: &[u8]) -> Result<BasisLibrary> {
    if bytes.len() < 14 {
        return Err(Error::Library("file too short".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(payload) != stored {
        return Err(Error::Library("checksum mismatch".into()));
    }
    if &payload[..4] != MAGIC {
        return Err(Error::Library("bad magic".into()));
    }
    let version = u16::from_le_bytes([payload[4], payload[5]]);
    if version != VERSION {
        return Err(Error::Library(format!("unsupported version {version}")));
    }
    let mut c = Cursor { bytes: payload, pos: 6 };
    let z = c.u32()?;
    let mut blocks = Vec::with_capacity(z.min(1024));
    for index in 0..z {
        let n = c.u32()?;
        let label = std::str::from_utf8(c.take(n)?)
            .map_err(|_| Error::Library(format!("block {index}: label is not UTF-8")))?
            .to_string();
        let (rows, cols) = (c.u32()?, c.u32()?);
        let count = rows
            .checked_mul(cols)
            .filter(|n| n.saturating_mul(8) <= payload.len())
            .ok_or_else(|| Error::Library(format!("block {index}: implausible size {rows}x{cols}")))?;
        let data: Vec<f64> = c
            .take(count * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Library(format!("block {index}: invalid entry {v}")));
        }
        let matrix = NonnegMatrix::new(rows, cols, data)?;
        for k in 0..cols {
            let s: f64 = matrix.column(k).iter().sum();
            if (s - 1.0).abs() > COLUMN_TOL {
                return Err(Error::Library(format!("block {index}: column {k} sums to {s}")));
            }
        }
        blocks.push(SpectralBasis::new(label, matrix)?);
    }
    if c.pos != payload.len() {
        return Err(Error::Library(format!("{} trailing bytes", payload.len() - c.pos)));
    }
    BasisLibrary::new(blocks)
}

pub fn read_library(path: impl AsRef<Path>) -> Result<BasisLibrary> {
    decode_library(&std::fs::read(path)?)
}

pub fn write_library(path: impl AsRef<Path>, lib: &BasisLibrary) -> Result<()> {
    std::fs::write(path, encode_library(lib))?;
    Ok(())
}
