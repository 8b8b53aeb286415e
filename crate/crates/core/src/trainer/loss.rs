//! Training objective and its analytic gradient.
//!
//! For an input `x` the seen-class logits are
//!
//! ```text
//! text_m(x) = s·⟨x, t_m⟩
//! lada_m(x) = Σ_l exp(−β(1 − ⟨w_m(l), x⟩))
//! ```
//!
//! In joint mode a single cross-entropy is taken over `text + lada`; in
//! sum mode the two heads get separate cross-entropies that are added.
//! The current-task term averages over the mini-batch. The replay term visits
//! every component of every distilled class (π-weighted augmented prototypes,
//! or uniformly weighted means) and averages over classes.
//!
//! With `g = weight·(softmax(z) − onehot(y))`, the gradients are
//! `∂/∂t_m = g_m·s·x` and `∂/∂w_m(l) = g_m·β·exp(−β(1 − ⟨w_m(l), x⟩))·x`,
//! taken only for unfrozen tensors.

use rand::Rng;
use rayon::prelude::*;

use super::model::{Model, ParamRef};
use super::LossMode;
use crate::adapter::{similarity_kernel, AdapterState};
use crate::error::{LadaError, Result};
use crate::linalg::dot;
use crate::prototypes::{PrototypeSet, ReplayEntry, ReplayMode};
use crate::stats::log_sum_exp;
use crate::text_head::TextClassifier;

/// Terms per parallel work unit; fixed so reductions never depend on thread count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub current_task_loss: f64,
    pub replay_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(current_task_loss: f64, replay_loss: f64) -> Self {
        LossBreakdown {
            current_task_loss,
            replay_loss,
            total: current_task_loss + replay_loss,
        }
    }
}

/// Replay vectors for one optimization step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayDraw {
    pub mode: Option<ReplayMode>,
    /// Noisy prototypes, weight π. Equal to `plain` in plain mode.
    pub augmented: Vec<ReplayEntry>,
    /// Component means, weight 1/λ₂′.
    pub plain: Vec<ReplayEntry>,
}

impl ReplayDraw {
    pub fn none() -> Self {
        ReplayDraw::default()
    }

    pub fn draw<R: Rng + ?Sized>(protos: &PrototypeSet, rng: &mut R, mode: ReplayMode) -> Self {
        let plain = protos.replay_batch(rng, ReplayMode::Plain);
        let augmented = match mode {
            ReplayMode::Augmented => protos.replay_batch(rng, ReplayMode::Augmented),
            ReplayMode::Plain => plain.clone(),
        };
        ReplayDraw {
            mode: Some(mode),
            augmented,
            plain,
        }
    }

    fn num_classes(&self) -> usize {
        let mut ids: Vec<u32> = self.plain.iter().map(|e| e.class_id).collect();
        ids.dedup();
        ids.len()
    }
}

/// z_m = text_m + lada_m over seen classes. An empty adapter contributes nothing.
pub fn combined_logits(adapter: &AdapterState, text: &TextClassifier, i: &[f64]) -> Result<Vec<f64>> {
    let mut z = text.seen_logits(i)?;
    if adapter.is_empty() {
        return Ok(z);
    }
    let lada = adapter.lada_logits(i)?;
    if lada.len() != z.len() {
        return Err(LadaError::Shape {
            expected: z.len(),
            actual: lada.len(),
        });
    }
    for (a, b) in z.iter_mut().zip(lada) {
        *a += b;
    }
    Ok(z)
}

/// `lse(z) − z[target]`, evaluated on the differences `z_m − z_target` so a
/// confident prediction keeps its small loss to full relative precision.
pub(crate) fn cross_entropy(z: &[f64], target: usize) -> f64 {
    let zt = z[target];
    let top = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b - zt));
    if top <= 0.0 {
        let rest: f64 = z
            .iter()
            .enumerate()
            .filter(|(m, _)| *m != target)
            .map(|(_, &v)| (v - zt).exp())
            .sum();
        rest.ln_1p()
    } else {
        top + z.iter().map(|&v| (v - zt - top).exp()).sum::<f64>().ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Head {
    Joint,
    Text,
    Lada,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Term<'a> {
    pub x: &'a [f64],
    pub target: usize,
    pub weight: f64,
    pub head: Head,
}

/// Which logit paths participate; both in normal training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Paths {
    pub text: bool,
    pub lada: bool,
}

impl Paths {
    pub const BOTH: Paths = Paths {
        text: true,
        lada: true,
    };
}

struct Context<'m> {
    model: &'m Model,
    seen: Vec<u32>,
    /// Trainable tensors with their seen-class index.
    trainable: Vec<(ParamRef, usize)>,
    text_rows: Vec<&'m [f64]>,
    paths: Paths,
}

impl<'m> Context<'m> {
    fn new(model: &'m Model, paths: Paths) -> Result<Self> {
        let seen = model.seen_classes()?;
        if model.adapter.is_empty() && paths.lada && !seen.is_empty() {
            return Err(LadaError::Contract(
                "adapter has no blocks for the seen classes".into(),
            ));
        }
        let text_rows: Vec<&[f64]> = model
            .text
            .entries()
            .iter()
            .filter(|e| e.active)
            .map(|e| e.vector.as_slice())
            .collect();
        let trainable = model
            .trainable_params()
            .into_iter()
            .map(|r| {
                let (_, class_id) = model.param_key(r);
                let idx = seen.iter().position(|&c| c == class_id).ok_or_else(|| {
                    LadaError::Contract(format!("trainable class {class_id} is not seen"))
                })?;
                Ok((r, idx))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Context {
            model,
            seen,
            trainable,
            text_rows,
            paths,
        })
    }

    fn seen_index(&self, class_id: u32) -> Result<usize> {
        self.seen
            .iter()
            .position(|&c| c == class_id)
            .ok_or_else(|| LadaError::Contract(format!("class {class_id} is not a seen class")))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        let d = self.model.dim();
        if x.len() != d {
            return Err(LadaError::Shape {
                expected: d,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn logits(&self, x: &[f64], head: Head) -> Vec<f64> {
        let use_text = self.paths.text && head != Head::Lada;
        let use_lada = self.paths.lada && head != Head::Text;
        let s = self.model.config.logit_scale;
        let beta = self.model.adapter.config().beta;
        let blocks = self.model.adapter.blocks();
        (0..self.seen.len())
            .map(|m| {
                let mut z = 0.0;
                if use_text {
                    z += s * dot(x, self.text_rows[m]);
                }
                if use_lada {
                    z += blocks[m].logit(x, beta);
                }
                z
            })
            .collect()
    }

    /// Adds the term's gradient into `grads` (aligned with `trainable`) and returns its loss.
    fn term(&self, t: &Term<'_>, grads: Option<&mut [Vec<f64>]>) -> f64 {
        let z = self.logits(t.x, t.head);
        let lse = log_sum_exp(&z);
        let loss = t.weight * cross_entropy(&z, t.target);
        let Some(grads) = grads else {
            return loss;
        };
        let s = self.model.config.logit_scale;
        let beta = self.model.adapter.config().beta;
        let use_text = self.paths.text && t.head != Head::Lada;
        let use_lada = self.paths.lada && t.head != Head::Text;
        for ((r, m), grad) in self.trainable.iter().zip(grads.iter_mut()) {
            let mut g = (z[*m] - lse).exp();
            if *m == t.target {
                g -= 1.0;
            }
            g *= t.weight;
            match r {
                ParamRef::Text(_) if use_text => {
                    let c = g * s;
                    for (gr, xi) in grad.iter_mut().zip(t.x) {
                        *gr += c * xi;
                    }
                }
                ParamRef::Block(b) if use_lada => {
                    let block = &self.model.adapter.blocks()[*b];
                    let d = block.dim();
                    for (l, w) in block.rows().enumerate() {
                        let c = g * beta * similarity_kernel(dot(w, t.x), beta);
                        for (gr, xi) in grad[l * d..(l + 1) * d].iter_mut().zip(t.x) {
                            *gr += c * xi;
                        }
                    }
                }
                _ => {}
            }
        }
        loss
    }

    fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.trainable
            .iter()
            .map(|(r, _)| vec![0.0; self.model.param(*r).len()])
            .collect()
    }

    /// Sum of term losses (and gradients), reduced chunk by chunk in order.
    fn accumulate(&self, terms: &[Term<'_>], want_grad: bool) -> (f64, Option<Vec<Vec<f64>>>) {
        let parts: Vec<(f64, Option<Vec<Vec<f64>>>)> = terms
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grads = want_grad.then(|| self.zero_grads());
                let mut loss = 0.0;
                for t in chunk {
                    loss += self.term(t, grads.as_deref_mut());
                }
                (loss, grads)
            })
            .collect();
        let mut loss = 0.0;
        let mut total = want_grad.then(|| self.zero_grads());
        for (l, g) in parts {
            loss += l;
            if let (Some(total), Some(g)) = (total.as_mut(), g) {
                for (a, b) in total.iter_mut().zip(g) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
            }
        }
        (loss, total)
    }

    fn current_terms<'a>(&self, batch: &'a [(Vec<f64>, u32)]) -> Result<Vec<Term<'a>>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let current = self
            .model
            .registry
            .current_task()
            .ok_or_else(|| LadaError::Contract("no task is current".into()))?;
        let weight = 1.0 / batch.len() as f64;
        let mut terms = Vec::with_capacity(batch.len() * 2);
        for (x, class_id) in batch {
            self.check_dim(x)?;
            if self.model.registry.task_of(*class_id) != Some(current) {
                return Err(LadaError::Contract(format!(
                    "class {class_id} is not part of current task {current}"
                )));
            }
            let target = self.seen_index(*class_id)?;
            self.push_terms(&mut terms, x, target, weight, None);
        }
        Ok(terms)
    }

    fn push_terms<'a>(&self, terms: &mut Vec<Term<'a>>, x: &'a [f64], target: usize, weight: f64, only: Option<Head>) {
        match (self.model.config.loss_mode, only) {
            (_, Some(head)) => terms.push(Term { x, target, weight, head }),
            (LossMode::JointLogits, None) => terms.push(Term { x, target, weight, head: Head::Joint }),
            (LossMode::SumLosses, None) => {
                terms.push(Term { x, target, weight, head: Head::Text });
                terms.push(Term { x, target, weight, head: Head::Lada });
            }
        }
    }

    fn replay_terms<'a>(&self, replay: &'a ReplayDraw) -> Result<Vec<Term<'a>>> {
        let classes = replay.num_classes();
        if classes == 0 {
            return Ok(Vec::new());
        }
        let per_class = 1.0 / classes as f64;
        let mode = replay.mode.unwrap_or(ReplayMode::Augmented);
        let mut terms = Vec::new();
        let mut add = |entries: &'a [ReplayEntry], only: Option<Head>| -> Result<()> {
            for e in entries {
                self.check_dim(&e.vector)?;
                let target = self.seen_index(e.class_id)?;
                self.push_terms(&mut terms, &e.vector, target, e.weight * per_class, only);
            }
            Ok(())
        };
        match (self.model.config.loss_mode, mode) {
            (LossMode::JointLogits, _) => add(&replay.augmented, None)?,
            (LossMode::SumLosses, ReplayMode::Plain) => add(&replay.plain, None)?,
            (LossMode::SumLosses, ReplayMode::Augmented) => {
                add(&replay.plain, Some(Head::Text))?;
                add(&replay.augmented, Some(Head::Lada))?;
            }
        }
        Ok(terms)
    }
}

pub(crate) fn evaluate(
    model: &Model,
    batch: &[(Vec<f64>, u32)],
    replay: &ReplayDraw,
    want_grad: bool,
    paths: Paths,
) -> Result<(LossBreakdown, Option<Vec<Vec<f64>>>)> {
    let ctx = Context::new(model, paths)?;
    let current = ctx.current_terms(batch)?;
    let replayed = ctx.replay_terms(replay)?;
    let (lc, gc) = ctx.accumulate(&current, want_grad);
    let (lr, gr) = ctx.accumulate(&replayed, want_grad);
    let grads = match (gc, gr) {
        (Some(mut a), Some(b)) => {
            for (x, y) in a.iter_mut().zip(b) {
                for (p, q) in x.iter_mut().zip(y) {
                    *p += q;
                }
            }
            Some(a)
        }
        _ => None,
    };
    Ok((LossBreakdown::new(lc, lr), grads))
}

/// Loss and gradient with respect to every tensor in `model.trainable_params()`.
pub fn loss_and_grad(
    model: &Model,
    batch: &[(Vec<f64>, u32)],
    replay: &ReplayDraw,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    let (loss, grads) = evaluate(model, batch, replay, true, Paths::BOTH)?;
    Ok((loss, grads.expect("gradients requested")))
}

pub fn loss_value(model: &Model, batch: &[(Vec<f64>, u32)], replay: &ReplayDraw) -> Result<LossBreakdown> {
    Ok(evaluate(model, batch, replay, false, Paths::BOTH)?.0)
}

/// Mean cross-entropy of a current-task batch.
pub fn loss_current(model: &Model, batch: &[(Vec<f64>, u32)]) -> Result<f64> {
    Ok(loss_value(model, batch, &ReplayDraw::none())?.current_task_loss)
}

/// Replay loss over all distilled classes with freshly drawn prototypes.
pub fn loss_replay<R: Rng + ?Sized>(model: &Model, rng: &mut R) -> Result<f64> {
    let draw = ReplayDraw::draw(&model.prototypes, rng, model.config.replay_mode);
    Ok(loss_value(model, &[], &draw)?.replay_loss)
}
