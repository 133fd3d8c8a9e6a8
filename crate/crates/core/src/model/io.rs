//! Model file.
//!
//! ```text
//! "PSCN"        magic
//! u32           format version (1)
//! u32           header length
//! [u8]          UTF-8 JSON header: network config, loss history, provenance
//! u64           parameter count
//! f32 × count   parameters, layer order, weights then bias (little-endian)
//! [u8; 32]      SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelError, Provenance, TrainedModel};
use crate::neural::{Network, NetworkConfig};

pub const MODEL_MAGIC: &[u8; 4] = b"PSCN";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    history: Vec<f64>,
    provenance: Provenance,
}

pub fn encode_model(model: &TrainedModel) -> Vec<u8> {
    let header = Header {
        config: model.network.config().clone(),
        history: model.history.clone(),
        provenance: model.provenance.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let params = model.network.flatten_parameters();
    let mut out = Vec::with_capacity(20 + header.len() + params.len() * 4 + 32);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8], ModelError> {
    let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or(ModelError::TruncatedFile)?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel, ModelError> {
    let mut pos = 0;
    if take(bytes, &mut pos, 4)? != MODEL_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(ModelError::VersionUnsupported(version));
    }
    let header_len = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()) as usize;
    let header_bytes = take(bytes, &mut pos, header_len)?;
    let count = u64::from_le_bytes(take(bytes, &mut pos, 8)?.try_into().unwrap());
    let count = usize::try_from(count).map_err(|_| ModelError::TruncatedFile)?;
    let blob = take(bytes, &mut pos, count.checked_mul(4).ok_or(ModelError::TruncatedFile)?)?;
    let body_end = pos;
    let stored = take(bytes, &mut pos, 32)?;
    if pos != bytes.len() {
        return Err(ModelError::Malformed(format!("{} trailing bytes", bytes.len() - pos)));
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != stored {
        return Err(ModelError::ChecksumMismatch);
    }
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| ModelError::Malformed(e.to_string()))?;
    let params: Vec<f32> = blob.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    if params.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Malformed("non-finite weight".into()));
    }
    let network = Network::from_parameters(header.config, &params).map_err(|e| ModelError::Malformed(e.to_string()))?;
    Ok(TrainedModel { network, history: header.history, provenance: header.provenance })
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<(), ModelError> {
    fs::write(path, encode_model(model)).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

pub fn load_model(path: &Path) -> Result<TrainedModel, ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_network;

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut m = build_network(12, 3).unwrap();
        m.history = vec![0.693, 0.5, 1.0 / 3.0];
        let bytes = encode_model(&m);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_model(&back), bytes);
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = encode_model(&build_network(10, 1).unwrap());
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_model(&bytes[..cut]), Err(ModelError::TruncatedFile)), "cut at {cut}");
        }
        let mut bad = bytes.clone();
        let last_weight = bytes.len() - 33;
        bad[last_weight] ^= 0x01;
        assert!(matches!(decode_model(&bad), Err(ModelError::ChecksumMismatch)));

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_model(&magic), Err(ModelError::BadMagic)));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(decode_model(&version), Err(ModelError::VersionUnsupported(9))));
    }
}
