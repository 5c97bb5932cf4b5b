//! Versioned binary checkpoint container: magic bytes, a JSON metadata
//! block, named f64 tensors, and a trailing SHA-256 over the whole payload.
//! Round-trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::params::{EITConfig, EITParams, ParamSet};

pub const PARAMS_MAGIC: &[u8; 8] = b"EITCKPT\x01";
pub const TRAINER_MAGIC: &[u8; 8] = b"EITTRNR\x01";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("config mismatch: checkpoint was built for {found}, context expects {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Serializes a metadata block plus named tensors into the container format.
pub fn write_container(
    path: &Path,
    magic: &[u8; 8],
    meta_json: &str,
    tensors: impl Iterator<Item = (String, Array2<f64>)> + ExactSizeIterator,
) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let meta = meta_json.as_bytes();
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(meta);
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(tensor.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(tensor.ncols() as u64).to_le_bytes());
        for v in tensor.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let hash = Sha256::digest(&buf);
    buf.extend_from_slice(&hash);

    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    // Write-temp-then-rename so a crash never leaves a torn checkpoint.
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(io_err)?;
    f.write_all(&buf).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io_err)
}

pub struct Container {
    pub meta_json: String,
    pub tensors: Vec<(String, Array2<f64>)>,
}

pub fn read_container(path: &Path, magic: &[u8; 8]) -> Result<Container, CheckpointError> {
    let corrupt = |reason: &str| CheckpointError::Corrupt {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
    if buf.len() < 32 + 8 + 4 + 8 {
        return Err(corrupt("file truncated"));
    }
    let (payload, stored_hash) = buf.split_at(buf.len() - 32);
    let hash = Sha256::digest(payload);
    if hash.as_slice() != stored_hash {
        return Err(corrupt("content hash mismatch"));
    }
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        if *pos + n > payload.len() {
            return Err(corrupt("unexpected end of payload"));
        }
        let s = &payload[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != magic {
        return Err(corrupt("bad magic bytes"));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(corrupt(&format!("unsupported format version {version}")));
    }
    let meta_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let meta_json = String::from_utf8(take(&mut pos, meta_len)?.to_vec())
        .map_err(|_| corrupt("metadata is not utf-8"))?;
    let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| corrupt("tensor name is not utf-8"))?;
        let rows = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| corrupt("tensor shape overflow"))?;
        let data = take(&mut pos, n * 8)?;
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Array2::from_shape_vec((rows, cols), values)
            .map_err(|_| corrupt("tensor shape inconsistent"))?;
        tensors.push((name, tensor));
    }
    if pos != payload.len() {
        return Err(corrupt("trailing bytes after tensors"));
    }
    Ok(Container { meta_json, tensors })
}

/// Saves network parameters and their config.
pub fn save_checkpoint(params: &EITParams, path: &Path) -> Result<(), CheckpointError> {
    let meta = serde_json::to_string(&params.config).expect("config serializes");
    let tensors: Vec<(String, Array2<f64>)> = params
        .set
        .iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    write_container(path, PARAMS_MAGIC, &meta, tensors.into_iter())
}

/// Loads parameters plus the config they were saved with.
pub fn load_checkpoint(path: &Path) -> Result<EITParams, CheckpointError> {
    let container = read_container(path, PARAMS_MAGIC)?;
    let config: EITConfig =
        serde_json::from_str(&container.meta_json).map_err(|e| CheckpointError::Corrupt {
            path: path.display().to_string(),
            reason: format!("bad config block: {e}"),
        })?;
    let mut set = ParamSet::default();
    for (name, tensor) in container.tensors {
        set.insert(name, tensor);
    }
    Ok(EITParams { config, set })
}

/// Loads a checkpoint and verifies it matches the geometry the caller
/// expects.
pub fn load_checkpoint_expecting(
    path: &Path,
    expected: &EITConfig,
) -> Result<EITParams, CheckpointError> {
    let params = load_checkpoint(path)?;
    if &params.config != expected {
        return Err(CheckpointError::ConfigMismatch {
            expected: format!("{expected:?}"),
            found: format!("{:?}", params.config),
        });
    }
    Ok(params)
}
