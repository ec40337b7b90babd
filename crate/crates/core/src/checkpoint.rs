//! Int8 symmetric per-tensor quantization and the binary checkpoint format
//! behind the Save/Load signatures.
//!
//! In-memory compute stays in floats; every save quantizes and every load
//! dequantizes. Layout, little-endian throughout:
//!
//! ```text
//! magic "EPCK" | u16 version | u64 config hash | u32 tensor count
//! per tensor: u16 name_len, name bytes, u8 group, u8 rank,
//!             u32 dims[rank], f32 scale, i8 payload
//! trailing CRC32 of everything before it
//! ```
//!
//! Files are written to a temp name and renamed; the data is fsynced before
//! the rename so a crash never leaves a half-written checkpoint behind.

use crate::model::{ModelConfig, NamedTensor, ParamGroup, ParamSet};
use ndarray::{ArrayD, IxDyn};
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"EPCK";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("tensor {name} contains a non-finite value")]
    NonFinite { name: String },
    #[error("refusing to save an empty parameter set")]
    EmptyParams,
    #[error("{path}: bad magic, not a checkpoint file")]
    BadMagic { path: String },
    #[error("{path}: version {got}, this build reads version {VERSION}")]
    VersionMismatch { path: String, got: u16 },
    #[error("{path}: checkpoint was written for a different model config (hash {got:#018x}, expected {expected:#018x})")]
    ConfigMismatch {
        path: String,
        got: u64,
        expected: u64,
    },
    #[error("{path}: file is truncated")]
    TruncatedFile { path: String },
    #[error("{path}: checksum mismatch, file is corrupt")]
    ChecksumMismatch { path: String },
    #[error("{path}: malformed tensor record: {detail}")]
    Malformed { path: String, detail: String },
    #[error("{path}: tensors do not match the expected config layout: {detail}")]
    LayoutMismatch { path: String, detail: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One tensor in quantized form: `dequantized = q * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub scale: f32,
    pub values: Vec<i8>,
}

/// Symmetric per-tensor quantization: `scale = max|t| / 127` (1 when the
/// tensor is all zero), values rounded ties-away-from-zero and clamped to
/// [-127, 127].
pub fn quantize_tensor(tensor: &NamedTensor) -> Result<QuantTensor, CheckpointError> {
    let mut max_abs = 0.0f64;
    for &v in tensor.values.iter() {
        if !v.is_finite() {
            return Err(CheckpointError::NonFinite {
                name: tensor.name.clone(),
            });
        }
        max_abs = max_abs.max(v.abs());
    }
    // The scale is stored as f32, so quantize against the stored value.
    let scale = if max_abs == 0.0 {
        1.0f32
    } else {
        (max_abs / 127.0) as f32
    };
    let s = scale as f64;
    let values = tensor
        .values
        .iter()
        .map(|&v| (v / s).round().clamp(-127.0, 127.0) as i8)
        .collect();
    Ok(QuantTensor {
        name: tensor.name.clone(),
        group: tensor.group,
        shape: tensor.values.shape().to_vec(),
        scale,
        values,
    })
}

/// Exact dequantization `q * scale`.
pub fn dequantize_tensor(qt: &QuantTensor) -> NamedTensor {
    let s = qt.scale as f64;
    let data: Vec<f64> = qt.values.iter().map(|&q| q as f64 * s).collect();
    NamedTensor {
        name: qt.name.clone(),
        group: qt.group,
        values: ArrayD::from_shape_vec(IxDyn(&qt.shape), data).expect("shape matches data"),
    }
}

fn encode(params: &ParamSet, config: &ModelConfig) -> Result<Vec<u8>, CheckpointError> {
    if params.is_empty() {
        return Err(CheckpointError::EmptyParams);
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&config.fingerprint().to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for tensor in params.tensors() {
        let qt = quantize_tensor(tensor)?;
        let name = qt.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(qt.group.tag());
        buf.push(qt.shape.len() as u8);
        for &d in &qt.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&qt.scale.to_le_bytes());
        buf.extend_from_slice(bytemuck_i8(&qt.values));
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

fn bytemuck_i8(values: &[i8]) -> &[u8] {
    // i8 and u8 have identical layout.
    unsafe { std::slice::from_raw_parts(values.as_ptr() as *const u8, values.len()) }
}

/// Saves the parameter set as a quantized checkpoint. Two saves of the same
/// parameters produce byte-identical files.
pub fn save_checkpoint(
    params: &ParamSet,
    config: &ModelConfig,
    path: &Path,
) -> Result<(), CheckpointError> {
    let buf = encode(params, config)?;
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp).map_err(io_err)?;
        file.write_all(&buf).map_err(io_err)?;
        file.sync_all().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::TruncatedFile {
                path: self.path.to_string(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, CheckpointError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint, verifying the format, checksum, config fingerprint,
/// and tensor layout, then dequantizes into a fresh ParamSet.
pub fn load_checkpoint(
    path: &Path,
    expected_config: &ModelConfig,
) -> Result<ParamSet, CheckpointError> {
    let path_str = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path_str.clone(),
        source,
    })?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path: &path_str,
    };

    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { path: path_str });
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            path: path_str,
            got: version,
        });
    }
    let hash = cur.u64()?;
    let expected_hash = expected_config.fingerprint();
    if hash != expected_hash {
        return Err(CheckpointError::ConfigMismatch {
            path: path_str,
            got: hash,
            expected: expected_hash,
        });
    }

    let count = cur.u32()? as usize;
    let mut quants = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec()).map_err(|_| {
            CheckpointError::Malformed {
                path: path_str.clone(),
                detail: "tensor name is not UTF-8".into(),
            }
        })?;
        let group_tag = cur.take(1)?[0];
        let group = ParamGroup::from_tag(group_tag).ok_or_else(|| CheckpointError::Malformed {
            path: path_str.clone(),
            detail: format!("unknown group tag {group_tag} for tensor {name}"),
        })?;
        let rank = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let scale = cur.f32()?;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(CheckpointError::Malformed {
                path: path_str.clone(),
                detail: format!("tensor {name} has non-positive scale {scale}"),
            });
        }
        let numel: usize = shape.iter().product();
        let payload = cur.take(numel)?;
        let values: Vec<i8> = payload.iter().map(|&b| b as i8).collect();
        quants.push(QuantTensor {
            name,
            group,
            shape,
            scale,
            values,
        });
    }

    // Exactly the CRC must remain.
    if cur.bytes.len() - cur.pos < 4 {
        return Err(CheckpointError::TruncatedFile { path: path_str });
    }
    if cur.bytes.len() - cur.pos > 4 {
        return Err(CheckpointError::ChecksumMismatch { path: path_str });
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { path: path_str });
    }

    // The config hash matched; the layout must too.
    let layout = crate::model::tensor_layout(expected_config);
    if layout.len() != quants.len() {
        return Err(CheckpointError::LayoutMismatch {
            path: path_str,
            detail: format!("{} tensors, expected {}", quants.len(), layout.len()),
        });
    }
    for (spec, qt) in layout.iter().zip(&quants) {
        if spec.name != qt.name || spec.group != qt.group || spec.shape != qt.shape {
            return Err(CheckpointError::LayoutMismatch {
                path: path_str,
                detail: format!(
                    "tensor {} ({:?}) does not match expected {} ({:?})",
                    qt.name, qt.shape, spec.name, spec.shape
                ),
            });
        }
    }

    let tensors = quants.iter().map(dequantize_tensor).collect();
    ParamSet::from_tensors(tensors).map_err(|e| CheckpointError::Malformed {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}
