//! The `HVTS` model checkpoint.
//!
//! ```text
//! "HVTS"                      4 bytes
//! version                     u32 (currently 1)
//! spec length                 u32
//! spec                        canonical JSON of the ModelSpec
//! tensor count                u32
//! per tensor, in ledger order:
//!   name length, name         u32, UTF-8
//!   shape                     4 x u32
//!   data                      f64 little-endian
//! ```
//!
//! Serializing an unchanged model always yields the same bytes.

use std::fs;
use std::path::Path;

use super::net::Model;
use super::params::{Param, ParamStore};
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::gradcore::Tensor4;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HVTS";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let spec = crate::canonical_json(model.spec())?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    buf.extend_from_slice(spec.as_bytes());
    let params = model.params().params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        for d in p.value.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                actual: self.buf.len() as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn corrupt(&self, detail: impl Into<String>) -> Error {
        Error::Corrupt {
            position: self.pos as u64,
            detail: detail.into(),
        }
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Model> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Corrupt { position: 0, detail: "bad magic, expected \"HVTS\"".into() });
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Corrupt { position: 4, detail: format!("unsupported version {version}") });
    }
    let len = c.u32()? as usize;
    let at = c.pos;
    let spec: ModelSpec = serde_json::from_slice(c.take(len)?).map_err(|e| Error::Corrupt {
        position: at as u64,
        detail: format!("model spec: {e}"),
    })?;
    let count = c.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(1024));
    let reference = ParamStore::zeros(&spec)?;
    if count != reference.len() {
        return Err(c.corrupt(format!("{count} tensors, the model needs {}", reference.len())));
    }
    for expected in reference.params() {
        let n = c.u32()? as usize;
        let at = c.pos;
        let name = std::str::from_utf8(c.take(n)?)
            .map_err(|_| Error::Corrupt { position: at as u64, detail: "tensor name is not UTF-8".into() })?
            .to_string();
        if name != expected.name {
            return Err(Error::Corrupt {
                position: at as u64,
                detail: format!("tensor {name}, expected {}", expected.name),
            });
        }
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = c.u32()? as usize;
        }
        if shape != expected.value.shape() {
            return Err(c.corrupt(format!("{name} has shape {shape:?}, expected {:?}", expected.value.shape())));
        }
        let len: usize = shape.iter().product();
        let raw = c.take(len * 8)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        params.push(Param { name, role: expected.role, value: Tensor4::from_vec(shape, data)? });
    }
    if c.pos != buf.len() {
        return Err(c.corrupt(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Model::from_parts(spec, ParamStore::from_params(params))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
