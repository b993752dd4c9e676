//! Model file format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "TSPN" (4) | version u16 | header_len u32 | header JSON | blob | crc32 u32
//! ```
//!
//! The header is canonical JSON (fixed field order) holding the model config
//! and a parameter manifest: name, shape, dtype, byte offset and byte length
//! into the blob. Blob segments are `f32` arrays for full-precision tensors;
//! quantized tensors are stored as `scale f64 | zero_point i32 | min f64 |
//! int8 codes` (scale and min stay at full precision so quantized weights
//! survive the round trip bitwise). The trailing CRC32 covers every byte
//! before it. Batch-norm running statistics are persisted alongside the
//! learnable parameters.
//!
//! Parameters live in the blob at `f32` precision, so values are rounded on
//! save; freshly built and freshly loaded models are always exactly
//! `f32`-representable, which makes save -> load -> save byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelConfig};
use crate::quant::QuantizedTensor;

pub const FORMAT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"TSPN";

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileHeader {
    config: ModelConfig,
    params: Vec<ParamEntry>,
}

fn push_f32(blob: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        blob.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serializes a model to the file format bytes.
pub fn serialize_model(m: &Model) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut blob = Vec::new();

    let shapes: std::collections::BTreeMap<String, Vec<usize>> =
        m.param_shapes().into_iter().collect();
    let mut state: Vec<(String, &[f64])> = m.params();
    state.extend(m.running_stats());

    for (name, values) in state {
        let offset = blob.len() as u64;
        let shape = shapes
            .get(&name)
            .cloned()
            .unwrap_or_else(|| vec![values.len()]);
        let dtype;
        if let Some(qt) = m.quantized.get(&name) {
            dtype = format!("q{}", qt.bits);
            blob.extend_from_slice(&qt.scale.to_le_bytes());
            blob.extend_from_slice(&qt.zero_point.to_le_bytes());
            blob.extend_from_slice(&qt.min.to_le_bytes());
            blob.extend(qt.codes.iter().map(|&c| c as u8));
        } else {
            dtype = "f32".to_string();
            push_f32(&mut blob, values);
        }
        entries.push(ParamEntry {
            name,
            shape,
            dtype,
            offset,
            len: blob.len() as u64 - offset,
        });
    }

    let header = FileHeader {
        config: m.config.clone(),
        params: entries,
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::with_capacity(14 + header_bytes.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&blob);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parses file-format bytes back into a model.
pub fn deserialize_model(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 14 {
        return Err(Error::ModelFile("file too short".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::ModelFile("bad magic, not a model file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::ModelFile(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let blob_start = 10 + header_len;
    if bytes.len() < blob_start + 4 {
        return Err(Error::ModelFile("truncated file".into()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(Error::ModelFile("checksum mismatch, file corrupted".into()));
    }
    let header: FileHeader = serde_json::from_slice(&bytes[10..blob_start])
        .map_err(|e| Error::ModelFile(format!("bad header: {e}")))?;
    header.config.validate()?;
    let blob = &bytes[blob_start..bytes.len() - 4];

    // decode every manifest entry before touching the model
    let mut decoded: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    let mut quantized: std::collections::BTreeMap<String, QuantizedTensor> = Default::default();
    for entry in &header.params {
        let name = &entry.name;
        let seg = blob
            .get(entry.offset as usize..(entry.offset + entry.len) as usize)
            .ok_or_else(|| Error::ModelFile(format!("segment for {name} out of bounds")))?;
        let numel: usize = entry.shape.iter().product();
        let values = match entry.dtype.as_str() {
            "f32" => {
                if seg.len() != 4 * numel {
                    return Err(Error::ModelFile(format!(
                        "bad f32 segment length for {name}"
                    )));
                }
                seg.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                    .collect()
            }
            "q8" | "q4" => {
                let bits: u32 = if entry.dtype == "q8" { 8 } else { 4 };
                if seg.len() != 20 + numel {
                    return Err(Error::ModelFile(format!(
                        "bad quantized segment length for {name}"
                    )));
                }
                let scale = f64::from_le_bytes(seg[0..8].try_into().unwrap());
                let zero_point = i32::from_le_bytes(seg[8..12].try_into().unwrap());
                let min = f64::from_le_bytes(seg[12..20].try_into().unwrap());
                let codes: Vec<i8> = seg[20..].iter().map(|&b| b as i8).collect();
                let qt = QuantizedTensor {
                    codes,
                    scale,
                    zero_point,
                    min,
                    bits,
                    shape: entry.shape.clone(),
                };
                let deq = qt.dequantize();
                quantized.insert(name.clone(), qt);
                deq
            }
            other => {
                return Err(Error::ModelFile(format!(
                    "unknown dtype {other} for {name}"
                )))
            }
        };
        if decoded.insert(name.clone(), values).is_some() {
            return Err(Error::ModelFile(format!("duplicate parameter {name}")));
        }
    }

    let mut model = build_model(&header.config, 0)?;
    for (name, values) in model.params_mut() {
        let src = decoded
            .remove(&name)
            .ok_or_else(|| Error::ModelFile(format!("manifest missing parameter {name}")))?;
        if src.len() != values.len() {
            return Err(Error::ModelFile(format!(
                "shape mismatch for {name}: manifest has {} values, model {}",
                src.len(),
                values.len()
            )));
        }
        values.copy_from_slice(&src);
    }
    for (name, values) in model.running_stats_mut() {
        let src = decoded
            .remove(&name)
            .ok_or_else(|| Error::ModelFile(format!("manifest missing parameter {name}")))?;
        if src.len() != values.len() {
            return Err(Error::ModelFile(format!(
                "shape mismatch for {name}: manifest has {} values, model {}",
                src.len(),
                values.len()
            )));
        }
        values.copy_from_slice(&src);
    }
    if let Some(name) = decoded.keys().next() {
        return Err(Error::ModelFile(format!(
            "manifest has unknown parameter {name}"
        )));
    }
    model.quantized = quantized;
    Ok(model)
}

pub fn save_model(m: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, serialize_model(m)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize_model(&bytes)
}
