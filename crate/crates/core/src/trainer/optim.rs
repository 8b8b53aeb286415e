//! AdamW: Adam moments with weight decay applied directly to the weights.
//!
//! ```text
//! θ ← θ − lr·wd·θ
//! m ← β₁m + (1 − β₁)g        v ← β₂v + (1 − β₂)g²
//! θ ← θ − lr · m̂ / (√v̂ + ε)  with m̂ = m/(1 − β₁ᵗ), v̂ = v/(1 − β₂ᵗ)
//! ```

use std::collections::BTreeMap;

use super::model::{Model, ParamRef};
use super::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

/// Moment accumulators keyed by (tensor kind, class id); only unfrozen
/// tensors ever get an entry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    moments: BTreeMap<(u8, u32), Moments>,
    steps: usize,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.moments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moments.is_empty()
    }

    pub fn moments(&self, key: (u8, u32)) -> Option<&Moments> {
        self.moments.get(&key)
    }

    /// Drops accumulators of tensors that are no longer trainable.
    pub fn retain_trainable(&mut self, model: &Model) {
        let keep: Vec<(u8, u32)> = model
            .trainable_params()
            .into_iter()
            .map(|r| model.param_key(r))
            .collect();
        self.moments.retain(|k, _| keep.contains(k));
    }

    pub fn apply(&mut self, model: &mut Model, params: &[ParamRef], grads: &[Vec<f64>], cfg: &TrainConfig) {
        self.steps += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        for (r, g) in params.iter().zip(grads) {
            let key = model.param_key(*r);
            let m = self.moments.entry(key).or_insert_with(|| Moments {
                first: vec![0.0; g.len()],
                second: vec![0.0; g.len()],
                step: 0,
            });
            m.step += 1;
            let t = m.step as i32;
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            let theta = model.param_mut(*r);
            for (k, p) in theta.iter_mut().enumerate() {
                let gk = g[k];
                *p -= cfg.lr * cfg.weight_decay * *p;
                m.first[k] = b1 * m.first[k] + (1.0 - b1) * gk;
                m.second[k] = b2 * m.second[k] + (1.0 - b2) * gk * gk;
                let m_hat = m.first[k] / c1;
                let v_hat = m.second[k] / c2;
                *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            }
        }
    }
}
