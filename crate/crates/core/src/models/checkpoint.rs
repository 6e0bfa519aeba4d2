//! Checkpoint layout: `EEGCKPT\0`, u64 header length, JSON header (format version,
//! model spec, dtype, array names and shapes), then every array's values little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelSpec, ParameterStore};
use crate::autograd::{Real, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"EEGCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: ModelSpec,
    dtype: String,
    arrays: Vec<ArrayMeta>,
}

#[derive(Serialize, Deserialize)]
struct ArrayMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub version: u32,
    pub spec: ModelSpec,
    pub params: ParameterStore<F>,
}

pub fn save_params<F: Real>(params: &ParameterStore<F>, spec: &ModelSpec, path: &Path) -> Result<()> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        spec: spec.clone(),
        dtype: F::DTYPE.to_string(),
        arrays: params
            .iter()
            .map(|(n, t)| ArrayMeta {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for t in params.tensors() {
        for v in t.data() {
            let bytes: Vec<u8> = match F::DTYPE {
                "f32" => (v.as_f64() as f32).to_le_bytes().to_vec(),
                _ => v.as_f64().to_le_bytes().to_vec(),
            };
            w.write_all(&bytes).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a checkpoint of any kind, converting values to `F`.
pub fn read_checkpoint<F: Real>(path: &Path) -> Result<Checkpoint<F>> {
    let io = |e| Error::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::IncompatibleCheckpoint(format!("{} is not a checkpoint", path.display())));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json).map_err(io)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::IncompatibleCheckpoint(format!(
            "format version {} (this build reads {})",
            header.version, CHECKPOINT_VERSION
        )));
    }
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::IncompatibleCheckpoint(format!("unknown dtype {}", other))),
    };
    let mut params = ParameterStore::new();
    let mut buf = Vec::new();
    for a in header.arrays {
        let n: usize = a.shape.iter().product();
        buf.resize(n * width, 0);
        r.read_exact(&mut buf).map_err(io)?;
        let data = buf
            .chunks_exact(width)
            .map(|b| {
                F::lit(if width == 4 {
                    f32::from_le_bytes(b.try_into().unwrap()) as f64
                } else {
                    f64::from_le_bytes(b.try_into().unwrap())
                })
            })
            .collect();
        params.insert(a.name, Tensor::new(a.shape, data)?)?;
    }
    Ok(Checkpoint {
        version: header.version,
        spec: header.spec,
        params,
    })
}

/// Loads parameters that must fit `expected`: same model kind and every array's shape.
pub fn load_params<F: Real>(path: &Path, expected: &ModelSpec) -> Result<ParameterStore<F>> {
    let ckpt = read_checkpoint::<F>(path)?;
    if ckpt.spec.kind_name() != expected.kind_name() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{} holds a {} model, expected {}",
            path.display(),
            ckpt.spec.kind_name(),
            expected.kind_name()
        )));
    }
    let template = expected.init::<F>(0)?;
    for (name, t) in template.iter() {
        match ckpt.params.get(name) {
            None => {
                return Err(Error::IncompatibleCheckpoint(format!("array '{}' missing from {}", name, path.display())))
            }
            Some(c) if c.shape() != t.shape() => {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "array '{}' has shape {:?} in {}, expected {:?}",
                    name,
                    c.shape(),
                    path.display(),
                    t.shape()
                )))
            }
            _ => {}
        }
    }
    if ckpt.params.len() != template.len() {
        let extra = ckpt.params.names().iter().find(|n| template.get(n).is_none()).cloned().unwrap_or_default();
        return Err(Error::IncompatibleCheckpoint(format!("unexpected array '{}' in {}", extra, path.display())));
    }
    if !ckpt.params.all_finite() {
        return Err(Error::IncompatibleCheckpoint(format!("{} contains non-finite values", path.display())));
    }
    Ok(ckpt.params)
}
