//! Flat binary container for named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes   b"DGMMTNSR"
//! version  u32       FORMAT_VERSION
//! count    u32       number of entries
//! entry*   name_len u32, name (UTF-8), channels u64, length u64,
//!          channels * length f64 values (little-endian IEEE-754)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DGMMTNSR";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.channels() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.length() as u64).to_le_bytes());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let channels = cur.u64()? as usize;
        let length = cur.u64()? as usize;
        let n = channels
            .checked_mul(length)
            .ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?;
        let raw = cur.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(channels, length, data)
            .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last entry".into()));
    }
    Ok(out)
}

pub fn save(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(entries)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
