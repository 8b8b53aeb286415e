//! Embedding ingestion: the LSE binary format, the class/task registry and a
//! seeded synthetic task-stream generator.
//!
//! Vectors are stored as `f32` (the on-disk precision) and widened to `f64`
//! whenever they enter training or inference math.

mod lse;
mod registry;
mod synthetic;

pub use lse::{load_lse, save_lse, LSE_MAGIC, LSE_VERSION};
pub use registry::{ClassRegistry, TaskDescriptor, TaskStatus};
pub use synthetic::{gen_synthetic_stream, SyntheticParams, SyntheticStream};

use crate::error::{LadaError, Result};
use crate::linalg;

/// Tolerance within which a vector already counts as unit-norm.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub task_id: u32,
    pub class_id: u32,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn vector_f64(&self) -> Vec<f64> {
        linalg::to_f64(&self.vector)
    }
}

/// An ordered collection of labeled embeddings sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    normalized: bool,
}

impl EmbeddingSet {
    pub fn new(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(LadaError::EmptyInput("dimension is zero".into()));
        }
        if let Some(bad) = records.iter().find(|r| r.vector.len() != dim) {
            return Err(LadaError::Shape {
                expected: dim,
                actual: bad.vector.len(),
            });
        }
        Ok(EmbeddingSet {
            dim,
            records,
            normalized: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// All vectors of `class_id`, in file order.
    pub fn class_vectors(&self, class_id: u32) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .filter(|r| r.class_id == class_id)
            .map(EmbeddingRecord::vector_f64)
            .collect()
    }

    /// Distinct class ids in order of first appearance.
    pub fn class_ids(&self) -> Vec<u32> {
        let mut seen = std::collections::BTreeSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.class_id))
            .map(|r| r.class_id)
            .collect()
    }

    /// Rejects records whose (task, class) pair the registry does not know.
    pub fn validate_against(&self, registry: &ClassRegistry) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            match registry.task_of(r.class_id) {
                Some(t) if t == r.task_id => {}
                Some(t) => {
                    return Err(LadaError::Registry(format!(
                        "record {i}: class {} belongs to task {t}, not task {}",
                        r.class_id, r.task_id
                    )))
                }
                None => {
                    return Err(LadaError::Registry(format!(
                        "record {i}: class {} (task {}) is not registered",
                        r.class_id, r.task_id
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }
}

/// Returns a copy with every vector scaled to unit L2 norm.
///
/// Vectors already within [`UNIT_NORM_TOL`] of unit norm are kept bit-for-bit,
/// which makes the pass idempotent.
pub fn normalize_set(set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let mut records = Vec::with_capacity(set.records.len());
    for (index, r) in set.records.iter().enumerate() {
        let mut v = r.vector_f64();
        let n = linalg::norm(&v);
        if n == 0.0 || !n.is_finite() {
            return Err(LadaError::Degenerate {
                index,
                reason: format!("vector norm is {n}"),
            });
        }
        let vector = if (n - 1.0).abs() <= UNIT_NORM_TOL {
            r.vector.clone()
        } else {
            linalg::normalize_in_place(&mut v);
            v.iter().map(|&x| x as f32).collect()
        };
        records.push(EmbeddingRecord {
            task_id: r.task_id,
            class_id: r.class_id,
            vector,
        });
    }
    Ok(EmbeddingSet {
        dim: set.dim,
        records,
        normalized: true,
    })
}
