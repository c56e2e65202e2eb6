//! Versioned parameter container shared by classifier and agent checkpoints.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes   "NBVLABCK"
//! version  u32       currently 1
//! kind     str       e.g. "classifier", "sac-agent"
//! n_meta   u32       followed by n_meta (key: str, value: str) pairs
//! n_block  u32       followed by n_block blocks:
//!   name   str
//!   flags  u32       bit 0 = trainable
//!   ndim   u32
//!   dims   u64 x ndim
//!   data   f64 x prod(dims)
//! ```
//!
//! where `str` is a `u32` byte length followed by UTF-8 bytes.

use std::io::{Read, Write};
use std::path::Path;

use super::{Params, Scalar};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NBVLABCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointBlock {
    pub name: String,
    pub trainable: bool,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub blocks: Vec<CheckpointBlock>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Checkpoint {
            kind: kind.into(),
            ..Default::default()
        }
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => self.meta.push((key, value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Parses a metadata value, failing with a domain error when absent.
    pub fn meta_parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        self.meta(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::domain(format!("checkpoint metadata `{key}` missing or invalid")))
    }

    pub fn add_params<T: Scalar>(&mut self, params: &Params<T>) {
        for b in params.blocks() {
            self.blocks.push(CheckpointBlock {
                name: b.name.clone(),
                trainable: b.trainable,
                shape: b.shape.clone(),
                data: b.data.iter().map(|x| x.as_f64()).collect(),
            });
        }
    }

    /// Copies every block of `params` from the block with the same name.
    pub fn fill_params<T: Scalar>(&self, params: &mut Params<T>) -> Result<()> {
        for i in 0..params.len() {
            let (name, shape) = {
                let b = params.block(i);
                (b.name.clone(), b.shape.clone())
            };
            let src = self
                .blocks
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| Error::domain(format!("checkpoint lacks block `{name}`")))?;
            if src.shape != shape {
                return Err(Error::domain(format!(
                    "block `{name}` has shape {:?}, expected {:?}",
                    src.shape, shape
                )));
            }
            for (d, &s) in params.data_mut(i).iter_mut().zip(&src.data) {
                *d = T::of(s);
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(w, &self.kind)?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for (k, v) in &self.meta {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        w.write_all(&(self.blocks.len() as u32).to_le_bytes())?;
        for b in &self.blocks {
            write_str(w, &b.name)?;
            w.write_all(&(b.trainable as u32).to_le_bytes())?;
            w.write_all(&(b.shape.len() as u32).to_le_bytes())?;
            for &d in &b.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in &b.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(r: &mut R) -> std::result::Result<Self, String> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err("bad magic".into());
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let kind = read_str(r)?;
        let n_meta = read_u32(r)? as usize;
        let mut meta = Vec::with_capacity(n_meta.min(1024));
        for _ in 0..n_meta {
            let k = read_str(r)?;
            let v = read_str(r)?;
            meta.push((k, v));
        }
        let n_blocks = read_u32(r)? as usize;
        let mut blocks = Vec::with_capacity(n_blocks.min(1024));
        for _ in 0..n_blocks {
            let name = read_str(r)?;
            let trainable = read_u32(r)? & 1 == 1;
            let ndim = read_u32(r)? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(read_u64(r)? as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len.min(1 << 24));
            let mut buf = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut buf).map_err(|e| e.to_string())?;
                data.push(f64::from_le_bytes(buf));
            }
            blocks.push(CheckpointBlock {
                name,
                trainable,
                shape,
                data,
            });
        }
        Ok(Checkpoint { kind, meta, blocks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice()).map_err(|reason| Error::format(path, reason))
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| e.to_string())?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::result::Result<u64, String> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| e.to_string())?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> std::result::Result<String, String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err("string too long".into());
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(|e| e.to_string())?;
    String::from_utf8(b).map_err(|e| e.to_string())
}
