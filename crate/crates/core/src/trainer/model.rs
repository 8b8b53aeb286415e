use crate::adapter::AdapterState;
use crate::embedding::{ClassRegistry, EmbeddingSet};
use crate::error::{LadaError, Result};
use crate::prototypes::PrototypeSet;
use crate::text_head::{vectors_by_class, TextClassifier, UnseenBank};

use super::TrainConfig;

/// Everything a run carries from task to task.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub registry: ClassRegistry,
    pub adapter: AdapterState,
    pub text: TextClassifier,
    /// Untrained text vectors for every registered class, registry order.
    pub vanilla: Vec<(u32, Vec<f64>)>,
    pub prototypes: PrototypeSet,
    pub config: TrainConfig,
}

/// A parameter tensor that receives gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamRef {
    /// Index into `adapter.blocks()`.
    Block(usize),
    /// Index into `text.entries()`.
    Text(usize),
}

impl Model {
    /// Starts a run. `vanilla_text` overrides the vectors used for unseen
    /// classes; by default they are the same text embeddings the head starts from.
    pub fn new(
        registry: ClassRegistry,
        text_set: &EmbeddingSet,
        vanilla_text: Option<&EmbeddingSet>,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let dim = text_set.dim();
        let text = TextClassifier::init_from_embeddings(text_set, &registry, config.logit_scale)?;
        let vanilla = vectors_by_class(vanilla_text.unwrap_or(text_set), &registry)?
            .into_iter()
            .map(|(_, c, v)| (c, v))
            .collect::<Vec<_>>();
        if let Some(v) = vanilla_text {
            if v.dim() != dim {
                return Err(LadaError::Shape {
                    expected: dim,
                    actual: v.dim(),
                });
            }
        }
        let adapter = AdapterState::new(config.adapter_config(), dim)?;
        let prototypes = PrototypeSet::new(config.lambda2);
        Ok(Model {
            registry,
            adapter,
            text,
            vanilla,
            prototypes,
            config,
        })
    }

    pub fn dim(&self) -> usize {
        self.adapter.dim()
    }

    /// Vanilla vectors of every class whose task has not started.
    pub fn unseen_bank(&self) -> UnseenBank {
        let unseen = self.registry.unseen_classes();
        let classes = self
            .vanilla
            .iter()
            .filter(|(c, _)| unseen.contains(c))
            .cloned()
            .collect();
        UnseenBank::new(self.dim(), classes).expect("vanilla vectors share the model dimension")
    }

    /// Seen classes in logit order. Fails if adapter, text head and registry disagree.
    pub fn seen_classes(&self) -> Result<Vec<u32>> {
        let seen = self.registry.seen_classes();
        let text = self.text.seen_class_ids();
        if text != seen {
            return Err(LadaError::Contract(format!(
                "text head covers {} seen classes, registry {}",
                text.len(),
                seen.len()
            )));
        }
        let adapter = self.adapter.class_ids();
        if !adapter.is_empty() && adapter != seen {
            return Err(LadaError::Contract(format!(
                "adapter covers {} classes, registry has {} seen",
                adapter.len(),
                seen.len()
            )));
        }
        Ok(seen)
    }

    /// Unfrozen tensors: adapter blocks first, then text vectors.
    pub fn trainable_params(&self) -> Vec<ParamRef> {
        let blocks = self
            .adapter
            .blocks()
            .iter()
            .enumerate()
            .filter(|(_, b)| !b.frozen)
            .map(|(i, _)| ParamRef::Block(i));
        let text = self
            .text
            .entries()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.active && !e.frozen)
            .map(|(i, _)| ParamRef::Text(i));
        blocks.chain(text).collect()
    }

    pub fn param(&self, r: ParamRef) -> &[f64] {
        match r {
            ParamRef::Block(i) => self.adapter.blocks()[i].weights(),
            ParamRef::Text(i) => &self.text.entries()[i].vector,
        }
    }

    pub(crate) fn param_mut(&mut self, r: ParamRef) -> &mut [f64] {
        match r {
            ParamRef::Block(i) => self.adapter.blocks_mut()[i].weights_mut(),
            ParamRef::Text(i) => &mut self.text.entries_mut()[i].vector,
        }
    }

    /// Stable identity of a parameter tensor across steps.
    pub fn param_key(&self, r: ParamRef) -> (u8, u32) {
        match r {
            ParamRef::Block(i) => (0, self.adapter.blocks()[i].class_id),
            ParamRef::Text(i) => (1, self.text.entries()[i].class_id),
        }
    }
}
