//! LSE: a little-endian container for labeled embeddings.
//!
//! ```text
//! magic "LSE1" | version u32 | d u32 | n u64 | n × { task_id u32 | class_id u32 | d × f32 }
//! ```

use std::fs;
use std::path::Path;

use super::{EmbeddingRecord, EmbeddingSet};
use crate::error::{LadaError, Result};

pub const LSE_MAGIC: &[u8; 4] = b"LSE1";
pub const LSE_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 4 + 8;

pub fn load_lse(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| LadaError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        LadaError::Format(m) => LadaError::Format(format!("{}: {m}", path.display())),
        LadaError::Corruption(m) => LadaError::Corruption(format!("{}: {m}", path.display())),
        LadaError::EmptyInput(m) => LadaError::EmptyInput(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_lse(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(set)?;
    fs::write(path, bytes).map_err(|e| LadaError::io(path, e))
}

pub(crate) fn encode(set: &EmbeddingSet) -> Result<Vec<u8>> {
    if set.is_empty() {
        return Err(LadaError::EmptyInput("refusing to write an empty set".into()));
    }
    let d = set.dim();
    let dim = u32::try_from(d).map_err(|_| LadaError::Parameter(format!("dimension {d} exceeds u32")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + set.len() * (8 + 4 * d));
    out.extend_from_slice(LSE_MAGIC);
    out.extend_from_slice(&LSE_VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for r in set.records() {
        out.extend_from_slice(&r.task_id.to_le_bytes());
        out.extend_from_slice(&r.class_id.to_le_bytes());
        for x in &r.vector {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<EmbeddingSet> {
    if bytes.len() < 4 || &bytes[..4] != LSE_MAGIC {
        return Err(LadaError::Format("missing LSE1 magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(LadaError::Corruption(format!(
            "header truncated at {} bytes",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != LSE_VERSION {
        return Err(LadaError::Format(format!("unsupported LSE version {version}")));
    }
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if d == 0 || n == 0 {
        return Err(LadaError::EmptyInput(format!("header declares d={d}, n={n}")));
    }
    let record_len = 8 + 4 * d;
    let expected = usize::try_from(n)
        .ok()
        .and_then(|n| n.checked_mul(record_len))
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or_else(|| LadaError::Corruption(format!("record count {n} overflows")))?;
    if bytes.len() != expected {
        return Err(LadaError::Corruption(format!(
            "payload is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let records = bytes[HEADER_LEN..]
        .chunks_exact(record_len)
        .map(|chunk| {
            let task_id = u32::from_le_bytes(chunk[0..4].try_into().unwrap());
            let class_id = u32::from_le_bytes(chunk[4..8].try_into().unwrap());
            let vector = chunk[8..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            EmbeddingRecord {
                task_id,
                class_id,
                vector,
            }
        })
        .collect();
    EmbeddingSet::new(d, records)
}
