//! Checkpoint directory: `manifest.json` + `tensors.bin`.
//!
//! `tensors.bin` is the concatenation of little-endian `f32` arrays in
//! manifest order; the manifest records each tensor's name, shape and byte
//! offset. Scalars (mixture weights, variances, config) live in the manifest
//! as JSON numbers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Model;
use super::TrainConfig;
use crate::adapter::{AdapterState, LabelMemoryBlock};
use crate::embedding::{ClassRegistry, TaskStatus};
use crate::error::{LadaError, Result};
use crate::prototypes::{ClassPrototypes, PrototypeComponent, PrototypeSet};
use crate::text_head::{TextClassifier, TextEntry};

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const TENSORS: &str = "tensors.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into tensors.bin.
    pub offset: u64,
}

impl TensorInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task_id: u32,
    pub status: TaskStatus,
    pub class_ids: Vec<u32>,
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub task_id: u32,
    pub class_id: u32,
    pub frozen: bool,
    pub tensor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEntryInfo {
    pub task_id: u32,
    pub class_id: u32,
    pub active: bool,
    pub frozen: bool,
    pub tensor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanillaEntry {
    pub class_id: u32,
    pub tensor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeEntry {
    pub task_id: u32,
    pub class_id: u32,
    pub weights: Vec<f64>,
    pub variances: Vec<f64>,
    /// `[components, d]` tensor of means.
    pub means: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub dim: usize,
    pub config: TrainConfig,
    pub tasks: Vec<TaskEntry>,
    pub tensors: Vec<TensorInfo>,
    pub adapter: Vec<BlockEntry>,
    pub text: Vec<TextEntryInfo>,
    pub vanilla: Vec<VanillaEntry>,
    pub lambda2: usize,
    pub prototypes: Vec<PrototypeEntry>,
}

struct TensorWriter {
    infos: Vec<TensorInfo>,
    bytes: Vec<u8>,
}

impl TensorWriter {
    fn push(&mut self, name: String, shape: Vec<usize>, data: &[f64]) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.infos.push(TensorInfo {
            name,
            shape,
            offset: self.bytes.len() as u64,
        });
        for &x in data {
            self.bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
        self.infos.len() - 1
    }
}

pub fn save_checkpoint(model: &Model, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let (manifest, bytes) = encode(model);
    fs::create_dir_all(dir).map_err(|e| LadaError::io(dir, e))?;
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| LadaError::json(dir.join(MANIFEST), e))?;
    text.push('\n');
    fs::write(dir.join(MANIFEST), text).map_err(|e| LadaError::io(dir.join(MANIFEST), e))?;
    fs::write(dir.join(TENSORS), bytes).map_err(|e| LadaError::io(dir.join(TENSORS), e))
}

pub(crate) fn encode(model: &Model) -> (Manifest, Vec<u8>) {
    let d = model.dim();
    let mut w = TensorWriter {
        infos: Vec::new(),
        bytes: Vec::new(),
    };
    let adapter = model
        .adapter
        .blocks()
        .iter()
        .map(|b| BlockEntry {
            task_id: b.task_id,
            class_id: b.class_id,
            frozen: b.frozen,
            tensor: w.push(format!("adapter/class_{}", b.class_id), vec![b.num_rows(), d], b.weights()),
        })
        .collect();
    let text = model
        .text
        .entries()
        .iter()
        .map(|e| TextEntryInfo {
            task_id: e.task_id,
            class_id: e.class_id,
            active: e.active,
            frozen: e.frozen,
            tensor: w.push(format!("text/class_{}", e.class_id), vec![d], &e.vector),
        })
        .collect();
    let vanilla = model
        .vanilla
        .iter()
        .map(|(c, v)| VanillaEntry {
            class_id: *c,
            tensor: w.push(format!("vanilla/class_{c}"), vec![d], v),
        })
        .collect();
    let prototypes = model
        .prototypes
        .classes()
        .iter()
        .map(|p| {
            let means: Vec<f64> = p.components.iter().flat_map(|c| c.mean.iter().copied()).collect();
            PrototypeEntry {
                task_id: p.task_id,
                class_id: p.class_id,
                weights: p.components.iter().map(|c| c.weight).collect(),
                variances: p.components.iter().map(|c| c.variance).collect(),
                means: w.push(format!("prototypes/class_{}", p.class_id), vec![p.components.len(), d], &means),
            }
        })
        .collect();
    let tasks = model
        .registry
        .tasks()
        .iter()
        .map(|t| TaskEntry {
            task_id: t.task_id,
            status: t.status,
            class_ids: t.class_ids.clone(),
            names: t
                .class_ids
                .iter()
                .map(|c| model.registry.name_of(*c).unwrap_or_default().to_string())
                .collect(),
        })
        .collect();
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        dim: d,
        config: model.config.clone(),
        tasks,
        tensors: w.infos,
        adapter,
        text,
        vanilla,
        lambda2: model.prototypes.lambda2(),
        prototypes,
    };
    (manifest, w.bytes)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| LadaError::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| LadaError::json(&path, e))?;
    let version = value.get("version").and_then(serde_json::Value::as_u64);
    if version != Some(u64::from(CHECKPOINT_VERSION)) {
        return Err(LadaError::Incompatible(format!(
            "{}: checkpoint version {:?}, this build reads {CHECKPOINT_VERSION}",
            path.display(),
            version
        )));
    }
    serde_json::from_value(value).map_err(|e| LadaError::Integrity(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let path = dir.join(TENSORS);
    let bytes = fs::read(&path).map_err(|e| LadaError::io(&path, e))?;
    decode(&manifest, &bytes)
}

fn tensor(manifest: &Manifest, bytes: &[u8], idx: usize, shape: &[usize]) -> Result<Vec<f64>> {
    let info = manifest
        .tensors
        .get(idx)
        .ok_or_else(|| LadaError::Integrity(format!("tensor index {idx} out of range")))?;
    if info.shape != shape {
        return Err(LadaError::Integrity(format!(
            "tensor {} has shape {:?}, expected {:?}",
            info.name, info.shape, shape
        )));
    }
    let start = usize::try_from(info.offset).map_err(|_| LadaError::Integrity("offset overflow".into()))?;
    let end = start + 4 * info.numel();
    let raw = bytes
        .get(start..end)
        .ok_or_else(|| LadaError::Integrity(format!("tensor {} extends past tensors.bin", info.name)))?;
    Ok(raw
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect())
}

pub(crate) fn decode(manifest: &Manifest, bytes: &[u8]) -> Result<Model> {
    let d = manifest.dim;
    if d == 0 {
        return Err(LadaError::Integrity("dimension is zero".into()));
    }
    let expected: usize = manifest.tensors.iter().map(|t| 4 * t.numel()).sum();
    if expected != bytes.len() {
        return Err(LadaError::Integrity(format!(
            "tensors.bin holds {} bytes, manifest describes {expected}",
            bytes.len()
        )));
    }
    let mut offset = 0u64;
    for t in &manifest.tensors {
        if t.offset != offset {
            return Err(LadaError::Integrity(format!("tensor {} is not contiguous", t.name)));
        }
        offset += 4 * t.numel() as u64;
    }
    manifest.config.validate()?;

    let mut registry = ClassRegistry::new(
        manifest
            .tasks
            .iter()
            .map(|t| {
                if t.names.len() != t.class_ids.len() {
                    return Err(LadaError::Integrity(format!("task {} names do not match class ids", t.task_id)));
                }
                Ok((t.task_id, t.class_ids.iter().copied().zip(t.names.iter().cloned()).collect()))
            })
            .collect::<Result<Vec<_>>>()?,
    )?;
    registry.set_statuses(&manifest.tasks.iter().map(|t| (t.task_id, t.status)).collect::<Vec<_>>())?;

    let mut adapter = AdapterState::new(manifest.config.adapter_config(), d)?;
    let mut blocks = Vec::with_capacity(manifest.adapter.len());
    for b in &manifest.adapter {
        let rows = manifest
            .tensors
            .get(b.tensor)
            .map(|t| t.shape.first().copied().unwrap_or(0))
            .unwrap_or(0);
        let mut block = LabelMemoryBlock::new(b.task_id, b.class_id, d, tensor(manifest, bytes, b.tensor, &[rows, d])?)?;
        block.frozen = b.frozen;
        blocks.push(block);
    }
    // Restore blocks without touching the stored frozen flags.
    let flags: Vec<bool> = blocks.iter().map(|b| b.frozen).collect();
    adapter.expand_for_task(blocks)?;
    for (b, f) in adapter.blocks_mut().iter_mut().zip(flags) {
        b.frozen = f;
    }

    let entries = manifest
        .text
        .iter()
        .map(|e| {
            Ok(TextEntry {
                class_id: e.class_id,
                task_id: e.task_id,
                vector: tensor(manifest, bytes, e.tensor, &[d])?,
                active: e.active,
                frozen: e.frozen,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let text = TextClassifier::from_entries(d, manifest.config.logit_scale, entries);

    let vanilla = manifest
        .vanilla
        .iter()
        .map(|v| Ok((v.class_id, tensor(manifest, bytes, v.tensor, &[d])?)))
        .collect::<Result<Vec<_>>>()?;

    let mut prototypes = PrototypeSet::new(manifest.lambda2);
    for p in &manifest.prototypes {
        let k = p.weights.len();
        if p.variances.len() != k {
            return Err(LadaError::Integrity(format!(
                "class {} has {k} weights but {} variances",
                p.class_id,
                p.variances.len()
            )));
        }
        let means = tensor(manifest, bytes, p.means, &[k, d])?;
        let components = means
            .chunks_exact(d)
            .zip(p.weights.iter().zip(&p.variances))
            .map(|(m, (&weight, &variance))| PrototypeComponent {
                weight,
                mean: m.to_vec(),
                variance,
            })
            .collect();
        prototypes.insert(ClassPrototypes {
            task_id: p.task_id,
            class_id: p.class_id,
            components,
        })?;
    }

    let model = Model {
        registry,
        adapter,
        text,
        vanilla,
        prototypes,
        config: manifest.config.clone(),
    };
    model.seen_classes().map_err(|e| LadaError::Integrity(e.to_string()))?;
    Ok(model)
}
