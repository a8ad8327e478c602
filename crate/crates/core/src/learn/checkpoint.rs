//! Binary checkpoint:
//!
//! ```text
//! b"DCMATCH\0"                  magic
//! u32 LE                        format version
//! u32 LE n, then n x u64 LE     dims: frames, tokens, channels, proto_dim, classes
//! f64 LE ...                    every tensor in ParamId::ALL order, row-major
//! ```
//!
//! A text sidecar `<file>.manifest.txt` lists tensor names, shapes and byte offsets.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::params::{ModelDims, ParamId, ParamStore};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DCMATCH\0";
pub const VERSION: u32 = 1;
const DIM_COUNT: u32 = 5;

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.txt");
    PathBuf::from(s)
}

fn header_len() -> usize {
    MAGIC.len() + 4 + 4 + 8 * DIM_COUNT as usize
}

pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<()> {
    let dims = params.dims();
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&DIM_COUNT.to_le_bytes());
    for v in [dims.frames, dims.tokens, dims.channels, dims.proto_dim, dims.classes] {
        bytes.extend_from_slice(&(v as u64).to_le_bytes());
    }
    let mut sidecar = format!(
        "format DCMATCH {VERSION}\ndims frames={} tokens={} channels={} proto_dim={} classes={}\n",
        dims.frames, dims.tokens, dims.channels, dims.proto_dim, dims.classes
    );
    for id in ParamId::ALL {
        let shape: Vec<String> = params.shape(id).iter().map(usize::to_string).collect();
        writeln!(sidecar, "{} f64le [{}] offset={}", id.name(), shape.join(","), bytes.len()).expect("string write");
        for v in params.value(id) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), sidecar)?;
    Ok(())
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

/// Reads a checkpoint. A wrong magic, version or dims header is
/// [`Error::Manifest`], a short file is [`Error::Payload`] and trailing bytes
/// are [`Error::Shape`].
pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path)?;
    if bytes.len() < header_len() {
        if bytes.len() >= MAGIC.len() && &bytes[..MAGIC.len()] == MAGIC {
            return Err(Error::Payload("checkpoint truncated inside its header".into()));
        }
        return Err(Error::Manifest("not a checkpoint file".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Manifest("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&bytes, 8);
    if version != VERSION {
        return Err(Error::Manifest(format!("unsupported checkpoint version {version}")));
    }
    if read_u32(&bytes, 12) != DIM_COUNT {
        return Err(Error::Manifest("unexpected dims header length".into()));
    }
    let d: Vec<usize> = (0..DIM_COUNT as usize).map(|i| read_u64(&bytes, 16 + 8 * i) as usize).collect();
    let dims = ModelDims {
        frames: d[0],
        tokens: d[1],
        channels: d[2],
        proto_dim: d[3],
        classes: d[4],
    };
    let mut params = ParamStore::zeros(dims).map_err(|e| Error::Manifest(e.to_string()))?;
    let total: usize = ParamId::ALL.iter().map(|&id| params.value(id).len()).sum();
    let expected = header_len() + 8 * total;
    if bytes.len() < expected {
        return Err(Error::Payload(format!(
            "checkpoint holds {} bytes, {expected} needed (truncated)",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Shape(format!(
            "checkpoint holds {} bytes but its dims account for {expected}",
            bytes.len()
        )));
    }
    let mut at = header_len();
    for id in ParamId::ALL {
        let n = params.value(id).len();
        let values: Vec<f64> = bytes[at..at + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Payload(format!("{} holds non-finite values", id.name())));
        }
        params.set(id, values)?;
        at += 8 * n;
    }
    Ok(params)
}
