//! Model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GSR-CKPT v1\n"
//! u64 dim, u64 max_len, u64 num_layers, u64 num_items, f32 dropout_rate
//! u64 tensor count
//! count × { u32 len, utf-8 name, u32 rank, rank × u64 dim, Π dims × f32 }
//! ```
//!
//! Tensors appear in canonical parameter order. Identical parameters always
//! produce identical bytes.

use std::fs;
use std::path::Path;

use gsr_core::model::{ModelConfig, ModelParams};
use gsr_core::numerics::Tensor;

use crate::codec::{check_magic, found_version, put_bytes, put_u32, put_u64, ByteReader, Truncated};

pub const MAGIC: &[u8] = b"GSR-CKPT v1\n";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a GSR-CKPT file")]
    NotCheckpoint,
    #[error("unsupported GSR-CKPT version {found:?} (expected v1)")]
    Version { found: String },
    #[error("GSR-CKPT file is truncated")]
    Truncated,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("corrupt GSR-CKPT file: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl From<Truncated> for CheckpointError {
    fn from(_: Truncated) -> Self {
        CheckpointError::Truncated
    }
}

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let c = &params.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [c.dim, c.max_len, c.num_layers, c.num_items] {
        put_u64(&mut out, v as u64).unwrap();
    }
    put_u32(&mut out, c.dropout_rate.to_bits()).unwrap();
    put_u64(&mut out, params.tensors().len() as u64).unwrap();
    for (i, t) in params.tensors().iter().enumerate() {
        put_bytes(&mut out, params.name(i).as_bytes()).unwrap();
        put_u32(&mut out, t.shape().len() as u32).unwrap();
        for &d in t.shape() {
            put_u64(&mut out, d as u64).unwrap();
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(buf: &[u8]) -> Result<ModelParams, CheckpointError> {
    match check_magic(buf, MAGIC) {
        Ok(true) => {}
        Ok(false) => return Err(CheckpointError::Version { found: found_version(buf, 9) }),
        Err(()) => return Err(CheckpointError::NotCheckpoint),
    }
    let mut r = ByteReader::new(&buf[MAGIC.len()..]);
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.u64()? as usize;
    }
    let config = ModelConfig { dim: dims[0], max_len: dims[1], num_layers: dims[2], num_items: dims[3], dropout_rate: r.f32()? };
    config.validate().map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    let count = r.u64()? as usize;
    if count != config.num_tensors() {
        return Err(CheckpointError::Invalid(format!("{count} tensors, config implies {}", config.num_tensors())));
    }
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let name = String::from_utf8_lossy(r.bytes()?).into_owned();
        let expected_name = ModelParams::<f32>::name_of(&config, i);
        if name != expected_name {
            return Err(CheckpointError::Invalid(format!("tensor {i} is {name:?}, expected {expected_name:?}")));
        }
        let rank = r.u32()? as usize;
        if rank > 4 {
            return Err(CheckpointError::Invalid(format!("{name}: rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let expected = ModelParams::<f32>::shape_for(&config, ModelParams::<f32>::slot_of(&config, i));
        if shape != expected {
            return Err(CheckpointError::Shape(format!("{name} stored as {shape:?}, its header implies {expected:?}")));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor::new(shape, data).map_err(|e| CheckpointError::Invalid(e.to_string()))?);
    }
    if r.remaining() != 0 {
        return Err(CheckpointError::Invalid(format!("{} trailing bytes", r.remaining())));
    }
    ModelParams::from_tensors(config, tensors).map_err(|e| CheckpointError::Invalid(e.to_string()))
}

/// Fails with [`CheckpointError::Shape`] naming the first tensor whose shape
/// differs between the checkpoint and `expected`.
pub fn check_compatible(params: &ModelParams, expected: &ModelConfig) -> Result<(), CheckpointError> {
    let have = &params.config;
    if have.num_layers != expected.num_layers {
        return Err(CheckpointError::Shape(format!(
            "checkpoint has {} layers, config expects {}",
            have.num_layers, expected.num_layers
        )));
    }
    for (i, t) in params.tensors().iter().enumerate() {
        let want = ModelParams::<f32>::shape_for(expected, ModelParams::<f32>::slot_of(expected, i));
        if t.shape() != want.as_slice() {
            return Err(CheckpointError::Shape(format!(
                "{} is {:?} in the checkpoint, config expects {:?}",
                params.name(i),
                t.shape(),
                want
            )));
        }
    }
    Ok(())
}

pub fn save(params: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(params)).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn load(path: &Path) -> Result<ModelParams, CheckpointError> {
    let buf = fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    decode(&buf)
}

/// Loads and checks against `expected` in one go.
pub fn load_for(path: &Path, expected: &ModelConfig) -> Result<ModelParams, CheckpointError> {
    let p = load(path)?;
    check_compatible(&p, expected)?;
    Ok(p)
}
