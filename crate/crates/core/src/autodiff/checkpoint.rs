//! Versioned binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "ECGWCKPT"
//! version      u32       currently 1
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON (architecture descriptor)
//! params       tensor section
//! buffers      tensor section (batch-norm running statistics)
//! has_adam     u8        0 or 1
//! [adam]       u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps,
//!              tensor section m, tensor section v
//!
//! tensor section: u32 count, then per tensor
//!   u32 name_len, name bytes (UTF-8), u32 ndim, u64 dims[ndim],
//!   f64 payload[product(dims)]
//! ```
//!
//! Sections are written in sorted name order, so equal states produce equal
//! bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{AdamConfig, AdamState, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"ECGWCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated or malformed checkpoint: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// JSON architecture descriptor and run metadata.
    pub header: String,
    pub params: ParamStore,
    pub buffers: ParamStore,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.header.len() as u32).to_le_bytes());
        out.extend_from_slice(self.header.as_bytes());
        write_section(&mut out, self.params.iter());
        write_section(&mut out, self.buffers.iter());
        match &self.optimizer {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                out.extend_from_slice(&s.step.to_le_bytes());
                for v in [s.config.lr, s.config.beta1, s.config.beta2, s.config.eps] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                write_section(&mut out, s.m.iter());
                write_section(&mut out, s.v.iter());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let header_len = r.u32()? as usize;
        let header = String::from_utf8(r.take(header_len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("header is not UTF-8".into()))?;
        let params = read_section(&mut r)?.into_iter().fold(ParamStore::new(), |mut p, (k, t)| {
            p.insert(k, t);
            p
        });
        let buffers = read_section(&mut r)?.into_iter().fold(ParamStore::new(), |mut p, (k, t)| {
            p.insert(k, t);
            p
        });
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let config = AdamConfig {
                    lr: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let m = read_section(&mut r)?;
                let v = read_section(&mut r)?;
                Some(AdamState { config, step, m, v })
            }
            other => return Err(CheckpointError::Malformed(format!("optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            header,
            params,
            buffers,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn write_section<'a>(out: &mut Vec<u8>, items: impl Iterator<Item = (&'a String, &'a Tensor)>) {
    let items: Vec<_> = items.collect();
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (name, t) in items {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_section(r: &mut Reader<'_>) -> Result<BTreeMap<String, Tensor>> {
    let count = r.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape, data)
            .map_err(|e| CheckpointError::Malformed(format!("tensor {name}: {e}")))?;
        out.insert(name, t);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Malformed(format!("need {n} bytes at offset {}", self.pos)))?;
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

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
