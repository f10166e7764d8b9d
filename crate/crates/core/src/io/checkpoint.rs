//! Deformation checkpoints: an 8-byte magic, a little-endian `u32` header
//! length, a JSON header, then every tensor as little-endian `f64` in header
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hexplane::{DeformDecoder, HexPlaneField};
use crate::math::Vec3;

pub const MAGIC: &[u8; 8] = b"S4DCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub spatial_res: usize,
    pub temporal_res: usize,
    pub features: usize,
    pub bounds_min: Vec3,
    pub bounds_max: Vec3,
    pub decoder_hidden: usize,
    pub decoder_hidden_layers: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

pub fn save_checkpoint(path: &Path, field: &HexPlaneField, decoder: &DeformDecoder) -> Result<()> {
    let header = CheckpointHeader {
        spatial_res: field.spatial_res,
        temporal_res: field.temporal_res,
        features: field.features,
        bounds_min: field.bounds_min,
        bounds_max: field.bounds_max,
        decoder_hidden: decoder.hidden,
        decoder_hidden_layers: decoder.hidden_layers,
        tensors: vec![
            TensorEntry {
                name: "planes".into(),
                len: field.params.len(),
            },
            TensorEntry {
                name: "decoder".into(),
                len: decoder.params.len(),
            },
        ],
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * (field.params.len() + decoder.params.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in field.params.iter().chain(&decoder.params) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(HexPlaneField, DeformDecoder)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::parse(path, 0, "not a deformation checkpoint"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 12 + len {
        return Err(Error::parse(path, bytes.len() as u64, "truncated header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[12..12 + len]).map_err(|e| Error::parse(path, 12, e.to_string()))?;
    if header.spatial_res < 2 || header.temporal_res < 2 || header.features == 0 || header.decoder_hidden_layers == 0 {
        return Err(Error::parse(path, 12, "invalid field or decoder shape"));
    }
    let mut field = HexPlaneField::filled(header.spatial_res, header.temporal_res, header.features, 0.0);
    field.bounds_min = header.bounds_min;
    field.bounds_max = header.bounds_max;
    let mut decoder = DeformDecoder::zeros(header.features, header.decoder_hidden, header.decoder_hidden_layers);
    let mut at = 12 + len;
    for entry in &header.tensors {
        let target = match entry.name.as_str() {
            "planes" => &mut field.params,
            "decoder" => &mut decoder.params,
            other => return Err(Error::parse(path, 12, format!("unknown tensor {other:?}"))),
        };
        if entry.len != target.len() {
            return Err(Error::parse(
                path,
                12,
                format!("tensor {} has {} values, shape implies {}", entry.name, entry.len, target.len()),
            ));
        }
        if bytes.len() < at + 8 * entry.len {
            return Err(Error::parse(path, bytes.len() as u64, format!("truncated tensor {}", entry.name)));
        }
        for v in target.iter_mut() {
            let x = f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
            if !x.is_finite() {
                return Err(Error::parse(path, at as u64, format!("non-finite value in {}", entry.name)));
            }
            *v = x;
            at += 8;
        }
    }
    Ok((field, decoder))
}
