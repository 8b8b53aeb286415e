//! Per-task training: memory-block initialization, AdamW over the unfrozen
//! tensors with full prototype replay at every step, then freezing and
//! prototype distillation.

mod checkpoint;
mod config;
pub mod gradcheck;
mod loss;
mod model;
mod optim;
#[cfg(test)]
mod tests;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{LossMode, TrainConfig};
pub use loss::{
    combined_logits, loss_and_grad, loss_current, loss_replay, loss_value, LossBreakdown, ReplayDraw,
};
pub use model::{Model, ParamRef};
pub use optim::{Moments, OptimizerState};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::init_block;
use crate::embedding::EmbeddingSet;
use crate::error::{LadaError, Result};
use crate::prototypes::distill_class;

/// Mixes a run seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_TASK: u64 = 1 << 32;
const STREAM_BLOCK: u64 = 2 << 32;
const STREAM_PROTO: u64 = 3 << 32;

/// One AdamW step on `batch` plus a fresh replay draw from `rng`.
pub fn grad_step(
    model: &mut Model,
    batch: &[(Vec<f64>, u32)],
    opt: &mut OptimizerState,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let replay = ReplayDraw::draw(&model.prototypes, rng, model.config.replay_mode);
    let params = model.trainable_params();
    let (loss, grads) = loss_and_grad(model, batch, &replay)?;
    let step = opt.steps() + 1;
    if !loss.total.is_finite() {
        return Err(LadaError::Numerical {
            step,
            what: format!("loss {}", loss.total),
        });
    }
    if let Some((r, _)) = params
        .iter()
        .zip(&grads)
        .find(|(_, g)| g.iter().any(|x| !x.is_finite()))
    {
        return Err(LadaError::Numerical {
            step,
            what: format!("gradient of {:?}", model.param_key(*r)),
        });
    }
    let cfg = model.config.clone();
    opt.apply(model, &params, &grads, &cfg);
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskReport {
    pub task_id: u32,
    /// Mean per-batch loss of every epoch.
    pub epoch_losses: Vec<LossBreakdown>,
    pub steps: usize,
}

/// Training samples of a task that has just become current.
pub struct PreparedTask {
    pub samples: Vec<(Vec<f64>, u32)>,
    pub features: Vec<Vec<Vec<f64>>>,
    pub class_ids: Vec<u32>,
    pub position: usize,
}

/// Validates `train_set`, marks the task current and adds its memory blocks.
pub fn begin_task(model: &mut Model, task_id: u32, train_set: &EmbeddingSet) -> Result<PreparedTask> {
    let cfg = model.config.clone();
    cfg.validate()?;
    if train_set.dim() != model.dim() {
        return Err(LadaError::Shape {
            expected: model.dim(),
            actual: train_set.dim(),
        });
    }
    let position = model.registry.position(task_id)?;
    let class_ids = model.registry.task(task_id)?.class_ids.clone();
    for (i, r) in train_set.records().iter().enumerate() {
        if r.task_id != task_id || !class_ids.contains(&r.class_id) {
            return Err(LadaError::Registry(format!(
                "training record {i} (task {}, class {}) is not part of task {task_id}",
                r.task_id, r.class_id
            )));
        }
    }
    let features: Vec<Vec<Vec<f64>>> = class_ids.iter().map(|&c| train_set.class_vectors(c)).collect();
    if let Some(pos) = features.iter().position(Vec::is_empty) {
        return Err(LadaError::EmptyInput(format!(
            "class {} has no training samples",
            class_ids[pos]
        )));
    }

    model.registry.begin_task(task_id)?;
    model.text.activate_task(task_id)?;
    let blocks = class_ids
        .iter()
        .zip(&features)
        .map(|(&c, f)| {
            init_block(
                f,
                task_id,
                c,
                model.adapter.config(),
                derive_seed(cfg.seed, STREAM_BLOCK | u64::from(c)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    model.adapter.expand_for_task(blocks)?;

    let samples: Vec<(Vec<f64>, u32)> = train_set
        .records()
        .iter()
        .map(|r| (r.vector_f64(), r.class_id))
        .collect();
    Ok(PreparedTask {
        samples,
        features,
        class_ids,
        position,
    })
}

/// Learns one task end to end and leaves it frozen and distilled.
pub fn train_task(model: &mut Model, task_id: u32, train_set: &EmbeddingSet) -> Result<TaskReport> {
    let PreparedTask {
        samples,
        features,
        class_ids,
        position,
    } = begin_task(model, task_id, train_set)?;
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_TASK | position as u64));
    let mut opt = OptimizerState::new();
    let mut report = TaskReport {
        task_id,
        ..TaskReport::default()
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<(Vec<f64>, u32)> = idx.iter().map(|&i| samples[i].clone()).collect();
            let loss = grad_step(model, &batch, &mut opt, &mut rng)?;
            sum.current_task_loss += loss.current_task_loss;
            sum.replay_loss += loss.replay_loss;
            sum.total += loss.total;
            batches += 1;
        }
        let n = batches as f64;
        report.epoch_losses.push(LossBreakdown {
            current_task_loss: sum.current_task_loss / n,
            replay_loss: sum.replay_loss / n,
            total: sum.total / n,
        });
    }
    report.steps = opt.steps();

    model.adapter.freeze_task(task_id)?;
    model.text.complete_task(task_id)?;
    model.registry.complete_task(task_id)?;
    opt.retain_trainable(model);
    debug_assert!(opt.is_empty());

    for (&c, f) in class_ids.iter().zip(&features) {
        let protos = distill_class(f, task_id, c, cfg.lambda2, derive_seed(cfg.seed, STREAM_PROTO | u64::from(c)))?;
        model.prototypes.insert(protos)?;
    }
    Ok(report)
}
