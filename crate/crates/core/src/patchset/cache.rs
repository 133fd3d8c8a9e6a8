//! Binary patch cache.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PSPC"            magic
//! u32               format version (1)
//! u32               header length in bytes
//! [u8]              UTF-8 JSON header (spec, seed, mode, image ids, counts, stats)
//! record × (train_count + test_count), train first:
//!     u8            label (0 negative, 1 positive)
//!     u8            provenance (255 original, else dihedral transform id)
//!     u32           source image index into header.image_ids
//!     u32, u32      origin x, y (downsampled pixels)
//!     f32 × 3·p·p   planar pixels in [0, 1]
//! [u8; 32]          SHA-256 of every preceding byte
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetSplit, Label, Patch, PatchError, PatchProvenance, PatchSpec, PipelineStats, SplitMode};
use crate::neural::Tensor;

pub const PATCH_CACHE_MAGIC: &[u8; 4] = b"PSPC";
pub const PATCH_CACHE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: PatchSpec,
    seed: u64,
    mode: SplitMode,
    image_ids: Vec<String>,
    train_image_ids: Vec<String>,
    test_image_ids: Vec<String>,
    train_count: usize,
    test_count: usize,
    stats: PipelineStats,
}

pub fn encode_split(split: &DatasetSplit) -> Vec<u8> {
    let mut image_ids: Vec<String> = Vec::new();
    let mut index: HashMap<&str, u32> = HashMap::new();
    for p in split.train.iter().chain(&split.test) {
        if !index.contains_key(p.source_image_id.as_str()) {
            index.insert(&p.source_image_id, image_ids.len() as u32);
            image_ids.push(p.source_image_id.clone());
        }
    }
    let header = Header {
        spec: split.spec.clone(),
        seed: split.seed,
        mode: split.mode,
        image_ids: image_ids.clone(),
        train_image_ids: split.train_image_ids.clone(),
        test_image_ids: split.test_image_ids.clone(),
        train_count: split.train.len(),
        test_count: split.test.len(),
        stats: split.stats.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let p = split.spec.patch_size;
    let mut out = Vec::with_capacity(12 + header.len() + (split.train.len() + split.test.len()) * (14 + 12 * p * p) + 32);
    out.extend_from_slice(PATCH_CACHE_MAGIC);
    out.extend_from_slice(&PATCH_CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for patch in split.train.iter().chain(&split.test) {
        out.push(patch.label.class_index() as u8);
        out.push(match patch.provenance {
            PatchProvenance::Original => 255,
            PatchProvenance::Augmented(t) => t,
        });
        out.extend_from_slice(&index[patch.source_image_id.as_str()].to_le_bytes());
        out.extend_from_slice(&patch.origin.0.to_le_bytes());
        out.extend_from_slice(&patch.origin.1.to_le_bytes());
        for v in patch.pixels.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PatchError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(PatchError::CacheTruncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PatchError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_split(bytes: &[u8]) -> Result<DatasetSplit, PatchError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != PATCH_CACHE_MAGIC {
        return Err(PatchError::Cache("bad magic".into()));
    }
    let version = r.u32()?;
    if version != PATCH_CACHE_VERSION {
        return Err(PatchError::Cache(format!("unsupported version {version}")));
    }
    let header_len = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| PatchError::Cache(format!("header: {e}")))?;
    let p = header.spec.patch_size;
    let record = 14 + 12 * p * p;
    let total = header.train_count + header.test_count;
    let body_len = total.checked_mul(record).ok_or(PatchError::CacheTruncated)?;
    let body = r.take(body_len)?;
    let digest_end = r.pos;
    let stored = r.take(32)?;
    if r.pos != bytes.len() {
        return Err(PatchError::Cache("trailing bytes after checksum".into()));
    }
    if Sha256::digest(&bytes[..digest_end]).as_slice() != stored {
        return Err(PatchError::Cache("checksum mismatch".into()));
    }
    let mut patches = Vec::with_capacity(total);
    for rec in body.chunks_exact(record) {
        let label = match rec[0] {
            0 => Label::Negative,
            1 => Label::Positive,
            other => return Err(PatchError::Cache(format!("bad label byte {other}"))),
        };
        let provenance = match rec[1] {
            255 => PatchProvenance::Original,
            t @ 0..=7 => PatchProvenance::Augmented(t),
            other => return Err(PatchError::Cache(format!("bad provenance byte {other}"))),
        };
        let src = u32::from_le_bytes(rec[2..6].try_into().unwrap()) as usize;
        let source_image_id =
            header.image_ids.get(src).cloned().ok_or_else(|| PatchError::Cache(format!("bad image index {src}")))?;
        let origin = (
            u32::from_le_bytes(rec[6..10].try_into().unwrap()),
            u32::from_le_bytes(rec[10..14].try_into().unwrap()),
        );
        let pixels: Vec<f32> = rec[14..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        patches.push(Patch {
            pixels: Tensor::new(vec![3, p, p], pixels).map_err(|e| PatchError::Cache(e.to_string()))?,
            label,
            source_image_id,
            origin,
            provenance,
        });
    }
    let test = patches.split_off(header.train_count);
    Ok(DatasetSplit {
        train: patches,
        test,
        seed: header.seed,
        mode: header.mode,
        spec: header.spec,
        train_image_ids: header.train_image_ids,
        test_image_ids: header.test_image_ids,
        stats: header.stats,
    })
}

pub fn save_split(split: &DatasetSplit, path: &Path) -> Result<(), PatchError> {
    fs::write(path, encode_split(split)).map_err(|e| PatchError::io(path, e))
}

pub fn load_split(path: &Path) -> Result<DatasetSplit, PatchError> {
    let bytes = fs::read(path).map_err(|e| PatchError::io(path, e))?;
    decode_split(&bytes)
}
