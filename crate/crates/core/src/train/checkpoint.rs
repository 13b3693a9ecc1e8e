//! Model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "ILCK1"               magic
//! u64                   model config hash
//! u32                   number of blobs
//! per blob:
//!   u16 + bytes         name (UTF-8)
//!   u8                  element width, 4 (f32) or 8 (f64)
//!   u8 + ndim × u32     shape
//!   u64                 payload length in bytes
//!   payload             elements
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Mlp, ModelConfig, NamedTensor};
use crate::scalar::{Precision, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"ILCK1";

/// Raw contents of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub precision: Precision,
    pub blobs: Vec<NamedTensor<f64>>,
}

pub fn save_checkpoint<T: Scalar>(model: &Mlp<T>, path: &Path) -> Result<()> {
    let tensors = model.state_tensors();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&model.config().hash().to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let width = T::PRECISION.byte_width();
    for t in &tensors {
        buf.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.push(width as u8);
        buf.push(t.shape.len() as u8);
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&((t.data.len() * width) as u64).to_le_bytes());
        for &v in &t.data {
            v.write_le(&mut buf);
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
}

/// Parses a checkpoint without reference to any model configuration.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(5)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let config_hash = r.u64()?;
    let count = r.u32()? as usize;
    let mut precision = None;
    let mut blobs = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format(path, "blob name is not UTF-8"))?
            .to_owned();
        let p = match r.u8()? {
            4 => Precision::F32,
            8 => Precision::F64,
            w => return Err(Error::format(path, format!("unsupported element width {w}"))),
        };
        if *precision.get_or_insert(p) != p {
            return Err(Error::format(path, "mixed element widths"));
        }
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = r.u64()? as usize;
        let elems: usize = shape.iter().product();
        if len != elems * p.byte_width() {
            return Err(Error::format(
                path,
                format!("blob {name}: payload length {len} does not match shape {shape:?}"),
            ));
        }
        let payload = r.take(len)?;
        let data = match p {
            Precision::F32 => payload.chunks_exact(4).map(|c| f32::read_le(c) as f64).collect(),
            Precision::F64 => payload.chunks_exact(8).map(f64::read_le).collect(),
        };
        blobs.push(NamedTensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { config_hash, precision: precision.unwrap_or_default(), blobs })
}

/// Loads a checkpoint into a model built from `config`, failing if the file
/// was written for a different configuration.
pub fn load_checkpoint<T: Scalar>(path: &Path, config: &ModelConfig) -> Result<Mlp<T>> {
    let ck = read_checkpoint(path)?;
    if ck.config_hash != config.hash() {
        return Err(Error::ConfigHashMismatch { expected: config.hash(), found: ck.config_hash });
    }
    if ck.precision != T::PRECISION {
        return Err(Error::format(path, format!("stored as {:?}, requested {:?}", ck.precision, T::PRECISION)));
    }
    let mut model = Mlp::<T>::new(config.clone(), 0)?;
    let tensors: Vec<NamedTensor<T>> = ck
        .blobs
        .into_iter()
        .map(|b| NamedTensor {
            name: b.name,
            shape: b.shape,
            // f32 → f64 → f32 is exact
            data: b.data.into_iter().map(T::from_f64).collect(),
        })
        .collect();
    model.load_state_tensors(&tensors).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(model)
}
