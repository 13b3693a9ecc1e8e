//! Binary dataset files.
//!
//! Little-endian layout:
//!
//! ```text
//! 0..5    magic "ILSB1"
//! 5..8    reserved, zero
//! 8..28   u32 N, u32 channels, u32 height, u32 width, u32 classes
//! 28..    N × u16 labels
//!         N·C·H·W × f32 pixels, row-major, each in [0, 1]
//! ```
//!
//! An optional JSON sidecar `<path>.manifest.json` carries the dataset name,
//! generation parameters and class counts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, ImageShape};

pub const MAGIC: &[u8; 5] = b"ILSB1";
pub const HEADER_LEN: usize = 28;

pub fn expected_file_size(n: usize, shape: ImageShape) -> usize {
    HEADER_LEN + 2 * n + 4 * n * shape.pixels()
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    if d.num_classes() > u16::MAX as usize + 1 {
        return Err(Error::invalid("too many classes for u16 labels"));
    }
    let shape = d.shape();
    let mut buf = Vec::with_capacity(expected_file_size(d.len(), shape));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&[0; 3]);
    for v in [d.len(), shape.channels, shape.height, shape.width, d.num_classes()] {
        let v = u32::try_from(v).map_err(|_| Error::invalid("dimension exceeds u32"))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &y in d.labels() {
        buf.extend_from_slice(&(y as u16).to_le_bytes());
    }
    for &p in d.images() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_u32(bytes: &[u8], at: usize) -> usize {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..5] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    if bytes[5..8] != [0, 0, 0] {
        return Err(Error::format(path, "nonzero reserved bytes"));
    }
    let n = read_u32(&bytes, 8);
    let shape = ImageShape::new(read_u32(&bytes, 12), read_u32(&bytes, 16), read_u32(&bytes, 20));
    let classes = read_u32(&bytes, 24);
    if shape.pixels() == 0 || classes == 0 {
        return Err(Error::format(path, "zero-sized image shape or class count"));
    }
    let expected = n
        .checked_mul(shape.pixels())
        .and_then(|p| p.checked_mul(4))
        .and_then(|p| p.checked_add(HEADER_LEN + 2 * n))
        .ok_or_else(|| Error::format(path, "header sizes overflow"))?;
    if bytes.len() < expected {
        return Err(Error::format(path, format!("truncated: {} of {expected} bytes", bytes.len())));
    }
    if bytes.len() > expected {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - expected)));
    }

    let label_bytes = &bytes[HEADER_LEN..HEADER_LEN + 2 * n];
    let mut labels = Vec::with_capacity(n);
    for (i, c) in label_bytes.chunks_exact(2).enumerate() {
        let y = u16::from_le_bytes([c[0], c[1]]) as usize;
        if y >= classes {
            return Err(Error::format(path, format!("label {y} of example {i} out of range")));
        }
        labels.push(y);
    }
    let mut images = Vec::with_capacity(n * shape.pixels());
    for c in bytes[HEADER_LEN + 2 * n..].chunks_exact(4) {
        let p = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::format(path, format!("pixel value {p} outside [0, 1]")));
        }
        images.push(p);
    }

    let name = match load_manifest(path) {
        Ok(m) => m.name,
        Err(_) => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    Dataset::new(name, shape, classes, images, labels).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub seed: u64,
    pub class_counts: Vec<usize>,
    /// Generation parameters, free-form.
    pub spec: serde_json::Value,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let p = manifest_path(path);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let p = manifest_path(path);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))
}
