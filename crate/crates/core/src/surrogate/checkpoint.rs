//! `FEW1` weights container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "FEW1"  u32 n_tensors
//! n_tensors x { u16 name_len, name, u8 dtype, u32 rank, rank x u32 dims, payload }
//! u32 json_len, json (UTF-8 configuration blob)
//! ```
//!
//! `dtype` 0 is `f32`; 1 is complex `f32` stored as interleaved (re, im)
//! pairs, whose dims exclude the pair axis.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::tensor::{ParamKind, ParamStore, Tensor};

pub const FEW_MAGIC: &[u8; 4] = b"FEW1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    /// Raw JSON configuration blob.
    pub config: String,
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= buf.len())
        .ok_or_else(|| Error::Format(format!("truncated checkpoint at offset {pos}")))?;
    let s = &buf[*pos..end];
    *pos = end;
    Ok(s)
}

fn u32_at(buf: &[u8], pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, pos, 4)?.try_into().unwrap()))
}

impl Checkpoint {
    pub fn new(params: ParamStore<f32>, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            params,
            config: serde_json::to_string(config)?,
        })
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C> {
        Ok(serde_json::from_str(&self.config)?)
    }

    /// The `kind` field of the embedded config, checked before the full
    /// config is deserialized.
    pub fn kind(&self) -> Result<String> {
        #[derive(serde::Deserialize)]
        struct Kind {
            kind: String,
        }
        Ok(self.config::<Kind>().map_err(|_| Error::Format("checkpoint config has no model kind".into()))?.kind)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.params.n_scalars() * 4 + self.config.len() + 64);
        out.extend_from_slice(FEW_MAGIC);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, p) in self.params.iter() {
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let dims = match p.kind {
                ParamKind::Real => &p.tensor.shape[..],
                ParamKind::Complex => &p.tensor.shape[..p.tensor.shape.len() - 1],
            };
            out.push(match p.kind {
                ParamKind::Real => 0,
                ParamKind::Complex => 1,
            });
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for &d in dims {
                let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &p.tensor.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut pos = 0;
        if take(buf, &mut pos, 4)? != FEW_MAGIC {
            return Err(Error::Format("bad magic, expected FEW1".into()));
        }
        let count = u32_at(buf, &mut pos)?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let n = u16::from_le_bytes(take(buf, &mut pos, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(buf, &mut pos, n)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let kind = match take(buf, &mut pos, 1)?[0] {
                0 => ParamKind::Real,
                1 => ParamKind::Complex,
                d => return Err(Error::Format(format!("tensor {name}: unknown dtype {d}"))),
            };
            let rank = u32_at(buf, &mut pos)? as usize;
            if rank > 16 {
                return Err(Error::Format(format!("tensor {name}: rank {rank} is implausible")));
            }
            let mut shape = Vec::with_capacity(rank + 1);
            for _ in 0..rank {
                shape.push(u32_at(buf, &mut pos)? as usize);
            }
            if kind == ParamKind::Complex {
                shape.push(2);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|l| l.checked_mul(4).is_some_and(|b| b <= buf.len()))
                .ok_or_else(|| Error::Format(format!("tensor {name}: shape {shape:?} exceeds the file")))?;
            let raw = take(buf, &mut pos, len * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            if params.kind(&name).is_some() {
                return Err(Error::Format(format!("duplicate tensor {name}")));
            }
            params.insert(name, Tensor::from_vec(&shape, data), kind);
        }
        let n = u32_at(buf, &mut pos)? as usize;
        let config = String::from_utf8(take(buf, &mut pos, n)?.to_vec())
            .map_err(|_| Error::Format("config blob is not UTF-8".into()))?;
        if pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes after config blob", buf.len() - pos)));
        }
        Ok(Self { params, config })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
