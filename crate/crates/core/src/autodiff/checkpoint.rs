//! Binary checkpoint format.
//!
//! ```text
//! magic   b"KPFC"
//! version u8 (= 1)
//! count   u32 LE
//! record* { name_len u32 LE, name utf-8, ndim u32 LE, dims u32 LE * ndim,
//!           values f32 LE * prod(dims) }
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KPFC";
pub const VERSION: u8 = 1;

pub fn encode(tensors: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptFile {
                path: self.path.to_path_buf(),
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let mut cur = Cursor { bytes, pos: 0, path };
    let corrupt = |offset: usize, msg: String| Error::CorruptFile {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    if cur.take(4, "magic")? != MAGIC {
        return Err(corrupt(0, "bad magic".into()));
    }
    let version = cur.take(1, "version")?[0];
    if version != VERSION {
        return Err(corrupt(4, format!("unsupported version {version}")));
    }
    let count = cur.u32("record count")?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let at = cur.pos;
        let len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| corrupt(at, "name is not utf-8".into()))?
            .to_string();
        let ndim = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 4, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if out.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(corrupt(at, format!("duplicate record {name}")));
        }
    }
    if cur.pos != bytes.len() {
        return Err(corrupt(cur.pos, "trailing bytes".into()));
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(tensors)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
