use serde::{Deserialize, Serialize};

use crate::adapter::AdapterConfig;
use crate::error::{LadaError, Result};
use crate::prototypes::ReplayMode;
use crate::text_head::DEFAULT_LOGIT_SCALE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// One softmax over text logits + adapter logits.
    JointLogits,
    /// Separate cross-entropies for the text head and the adapter, summed.
    SumLosses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub loss_mode: LossMode,
    pub replay_mode: ReplayMode,
    pub seed: u64,
    pub beta: f64,
    pub lambda1: usize,
    pub lambda2: usize,
    pub logit_scale: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 1e-3,
            weight_decay: 0.01,
            batch_size: 64,
            loss_mode: LossMode::JointLogits,
            replay_mode: ReplayMode::Augmented,
            seed: 0,
            beta: 5.0,
            lambda1: 16,
            lambda2: 4,
            logit_scale: DEFAULT_LOGIT_SCALE,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn adapter_config(&self) -> AdapterConfig {
        AdapterConfig {
            lambda1: self.lambda1,
            beta: self.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(LadaError::Parameter(what.to_string()));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("lr must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad("weight_decay must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.lambda2 == 0 {
            return bad("lambda2 must be at least 1");
        }
        if !(self.logit_scale > 0.0) || !self.logit_scale.is_finite() {
            return bad("logit_scale must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        self.adapter_config().validate()
    }
}
