//! Binary checkpoint: an 8-byte little-endian header length, a JSON header,
//! then every tensor as little-endian f64 in `Parameters::tensors` order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Parameters};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    /// Byte offset into the payload.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint(params: &Parameters, cfg: &ModelConfig) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut payload = Vec::with_capacity(params.n_params() * 8);
    for (name, t) in params.tensors() {
        entries.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            dtype: "f64".into(),
            offset: payload.len(),
        });
        for v in t.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        tensors: entries,
    })?;
    let mut out = Vec::with_capacity(8 + header.len() + payload.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, Parameters)> {
    let bad = |m: String| Error::Checkpoint(m);
    if bytes.len() < 8 {
        return Err(bad("truncated header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() < header_len {
        return Err(bad("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..header_len])
        .map_err(|e| bad(format!("invalid header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    header.config.check()?;
    let payload = &body[header_len..];
    let mut params = Parameters::zeros(&header.config);
    let mut consumed = 0;
    {
        let mut tensors = params.tensors_mut();
        if tensors.len() != header.tensors.len() {
            return Err(bad(format!(
                "expected {} tensors, found {}",
                tensors.len(),
                header.tensors.len()
            )));
        }
        for ((name, t), entry) in tensors.iter_mut().zip(&header.tensors) {
            if *name != entry.name || t.shape() != entry.shape.as_slice() || entry.dtype != "f64" {
                return Err(bad(format!(
                    "tensor `{}` {:?} {} does not match expected `{name}` {:?}",
                    entry.name,
                    entry.shape,
                    entry.dtype,
                    t.shape()
                )));
            }
            let len = t.len() * 8;
            let end = entry.offset.checked_add(len).filter(|&e| e <= payload.len());
            let Some(end) = end else {
                return Err(bad(format!("tensor `{name}` runs past the payload")));
            };
            let raw = &payload[entry.offset..end];
            for (dst, chunk) in t.iter_mut().zip(raw.chunks_exact(8)) {
                *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            consumed += len;
        }
    }
    if consumed != payload.len() {
        return Err(bad(format!(
            "payload has {} bytes, tensors cover {consumed}",
            payload.len()
        )));
    }
    Ok((header.config, params))
}

pub fn save_checkpoint(path: &Path, params: &Parameters, cfg: &ModelConfig) -> Result<()> {
    let bytes = write_checkpoint(params, cfg)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, Parameters)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 30,
            model_dim: 8,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 10,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = tiny();
        let mut params = Parameters::init(&cfg, 5).unwrap();
        params.blocks[0].b_o[3] = f64::MIN_POSITIVE;
        params.lnf_b[0] = -0.0;
        let bytes = write_checkpoint(&params, &cfg).unwrap();
        let (cfg2, back) = read_checkpoint(&bytes).unwrap();
        assert_eq!(cfg2, cfg);
        for ((_, a), (_, b)) in params.tensors().iter().zip(back.tensors()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(write_checkpoint(&back, &cfg2).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_reported() {
        let cfg = tiny();
        let bytes = write_checkpoint(&Parameters::init(&cfg, 5).unwrap(), &cfg).unwrap();
        assert!(read_checkpoint(&bytes[..4]).is_err());
        assert!(read_checkpoint(&bytes[..bytes.len() - 8]).is_err());
        let mut longer = bytes.clone();
        longer.extend_from_slice(&[0; 8]);
        assert!(read_checkpoint(&longer).is_err());
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[8..8 + header_len])
            .unwrap()
            .replace("\"format_version\":1", "\"format_version\":9");
        let mut bumped = bytes[..8].to_vec();
        bumped.extend_from_slice(header.as_bytes());
        bumped.extend_from_slice(&bytes[8 + header_len..]);
        assert!(matches!(read_checkpoint(&bumped), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let cfg = tiny();
        let params = Parameters::init(&cfg, 2).unwrap();
        save_checkpoint(&path, &params, &cfg).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap().1, params);
        assert!(load_checkpoint(&dir.path().join("missing.bin")).is_err());
    }
}
