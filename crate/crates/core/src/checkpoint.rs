//! Versioned binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TGPT"                     magic
//! u32                        format version
//! u32 + bytes                model config as canonical JSON
//! u32                        parameter count
//! per parameter:
//!   u32 + bytes              name
//!   u32                      rank
//!   u64 * rank               dims
//!   f64 * prod(dims)         values
//! u32                        CRC32 of everything between the version and here
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::model::{ModelConfig, WeightStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TGPT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub weights: WeightStore,
    pub version: u32,
    pub crc: u32,
}

impl Checkpoint {
    /// Identifier reported by the service: format version plus content checksum.
    pub fn version_string(&self) -> String {
        format!("tgpt-v{}-{:08x}", self.version, self.crc)
    }
}

/// Serialize without checking that `weights` agree with `config`.
pub fn encode(config: &ModelConfig, weights: &WeightStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(config).map_err(|e| Error::config(e.to_string()))?;
    put_len(&mut out, json.len())?;
    out.extend_from_slice(&json);
    put_len(&mut out, weights.len())?;
    for (name, t) in weights.iter() {
        put_len(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_len(&mut out, t.rank())?;
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::config("checkpoint field too large"))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

pub fn save_weights(weights: &WeightStore, config: &ModelConfig, path: impl AsRef<Path>) -> Result<()> {
    config.validate()?;
    weights.validate(config)?;
    fs::write(path, encode(config, weights)?)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let bytes = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(bytes)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(CheckpointError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&body[HEADER_LEN..]);
    if stored != computed {
        return Err(CheckpointError::Crc { stored, computed });
    }

    let mut cur = Cursor { buf: body, pos: HEADER_LEN };
    let json_len = cur.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(cur.take(json_len)?)
        .map_err(|e| CheckpointError::Integrity(format!("config block: {e}")))?;
    config
        .validate()
        .map_err(|e| CheckpointError::Integrity(e.to_string()))?;
    let count = cur.u32()? as usize;
    let mut params = BTreeMap::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| CheckpointError::Integrity("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(usize::try_from(cur.u64()?).map_err(|_| CheckpointError::Truncated)?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(CheckpointError::Truncated)?;
        let raw = cur.take(numel.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Integrity(format!("{name}: {e}")))?;
        if params.insert(name.clone(), tensor).is_some() {
            return Err(CheckpointError::Integrity(format!("duplicate parameter {name}")));
        }
    }
    if cur.pos != body.len() {
        return Err(CheckpointError::Integrity("trailing bytes after parameters".into()));
    }
    let weights = WeightStore::from_map(params);
    weights
        .validate(&config)
        .map_err(|e| CheckpointError::Integrity(e.to_string()))?;
    Ok(Checkpoint {
        config,
        weights,
        version,
        crc: stored,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Ok(decode(&fs::read(path)?)?)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(WeightStore, ModelConfig)> {
    let ck = load_checkpoint(path)?;
    Ok((ck.weights, ck.config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_weights;

    fn config() -> ModelConfig {
        ModelConfig {
            input_length: 6,
            max_horizon: 3,
            d_model: 4,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            ff_dim: 8,
            dropout: 0.0,
            n_exo_channels: 1,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let cfg = config();
        let w = init_weights(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tgpt");
        save_weights(&w, &cfg, &path).unwrap();
        let (w2, cfg2) = load_weights(&path).unwrap();
        assert_eq!(cfg, cfg2);
        for ((n1, t1), (n2, t2)) in w.iter().zip(w2.iter()) {
            assert_eq!(n1, n2);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t1), bits(t2));
        }
        assert_eq!(encode(&cfg, &w).unwrap(), encode(&cfg2, &w2).unwrap());
    }

    #[test]
    fn version_byte_flip_is_reported() {
        let cfg = config();
        let mut bytes = encode(&cfg, &init_weights(&cfg, 1).unwrap()).unwrap();
        bytes[4] ^= 0x02;
        assert_eq!(
            decode(&bytes).unwrap_err(),
            CheckpointError::VersionMismatch { found: 3, expected: 1 }
        );
    }

    #[test]
    fn bad_magic_and_truncation() {
        let cfg = config();
        let bytes = encode(&cfg, &init_weights(&cfg, 1).unwrap()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode(&bad).unwrap_err(), CheckpointError::BadMagic);
        assert!(decode(&bytes[..bytes.len() - 9]).is_err());
        assert_eq!(decode(&bytes[..6]).unwrap_err(), CheckpointError::Truncated);
    }

    #[test]
    fn config_disagreeing_with_tensors_is_an_integrity_error() {
        let cfg = config();
        let w = init_weights(&cfg, 1).unwrap();
        let mut wrong = cfg.clone();
        wrong.d_model = 8;
        let bytes = encode(&wrong, &w).unwrap();
        assert!(matches!(decode(&bytes).unwrap_err(), CheckpointError::Integrity(_)));
        assert!(save_weights(&w, &wrong, std::env::temp_dir().join("never-written.tgpt")).is_err());
    }

    #[test]
    fn version_string_carries_format_and_checksum() {
        let cfg = config();
        let bytes = encode(&cfg, &init_weights(&cfg, 1).unwrap()).unwrap();
        let ck = decode(&bytes).unwrap();
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        assert_eq!(ck.version_string(), format!("tgpt-v1-{crc:08x}"));
    }
}
