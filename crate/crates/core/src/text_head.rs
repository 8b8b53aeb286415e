//! Text-feature classifier.
//!
//! One vector per registered class, initialized from the vanilla text
//! embeddings. A task's vectors become active (seen) when the task starts,
//! are optimized while it is current and are frozen once it completes.
//! Classes that are not yet seen are scored through an [`UnseenBank`] of
//! vanilla vectors instead.

use crate::embedding::{ClassRegistry, EmbeddingSet};
use crate::error::{LadaError, Result};
use crate::linalg::{dot, normalize_in_place};

pub const DEFAULT_LOGIT_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TextEntry {
    pub class_id: u32,
    pub task_id: u32,
    pub vector: Vec<f64>,
    pub active: bool,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextClassifier {
    dim: usize,
    logit_scale: f64,
    /// Registry order.
    entries: Vec<TextEntry>,
}

/// Collects one normalized vector per registered class from a text set.
pub fn vectors_by_class(text_set: &EmbeddingSet, registry: &ClassRegistry) -> Result<Vec<(u32, u32, Vec<f64>)>> {
    let mut out = Vec::with_capacity(registry.num_classes());
    for task in registry.tasks() {
        for &class_id in &task.class_ids {
            let mut matches = text_set.records().iter().filter(|r| r.class_id == class_id);
            let record = matches.next().ok_or_else(|| {
                LadaError::Registry(format!(
                    "no text embedding for class {class_id} ({})",
                    registry.name_of(class_id).unwrap_or("?")
                ))
            })?;
            if matches.next().is_some() {
                return Err(LadaError::Registry(format!(
                    "class {class_id} has more than one text embedding"
                )));
            }
            let mut v = record.vector_f64();
            if normalize_in_place(&mut v) == 0.0 {
                return Err(LadaError::Degenerate {
                    index: class_id as usize,
                    reason: "zero text embedding".into(),
                });
            }
            out.push((task.task_id, class_id, v));
        }
    }
    Ok(out)
}

impl TextClassifier {
    pub fn init_from_embeddings(text_set: &EmbeddingSet, registry: &ClassRegistry, logit_scale: f64) -> Result<Self> {
        if !(logit_scale > 0.0) || !logit_scale.is_finite() {
            return Err(LadaError::Parameter(format!(
                "logit scale must be positive, got {logit_scale}"
            )));
        }
        let entries = vectors_by_class(text_set, registry)?
            .into_iter()
            .map(|(task_id, class_id, vector)| TextEntry {
                class_id,
                task_id,
                vector,
                active: false,
                frozen: false,
            })
            .collect();
        let mut clf = TextClassifier {
            dim: text_set.dim(),
            logit_scale,
            entries,
        };
        for task in registry.tasks() {
            if task.status != crate::embedding::TaskStatus::Unseen {
                clf.activate_task(task.task_id)?;
            }
        }
        Ok(clf)
    }

    pub(crate) fn from_entries(dim: usize, logit_scale: f64, entries: Vec<TextEntry>) -> Self {
        TextClassifier {
            dim,
            logit_scale,
            entries,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn logit_scale(&self) -> f64 {
        self.logit_scale
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TextEntry] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [TextEntry] {
        &mut self.entries
    }

    pub fn entry(&self, class_id: u32) -> Option<&TextEntry> {
        self.entries.iter().find(|e| e.class_id == class_id)
    }

    /// Active classes in registry order.
    pub fn seen_class_ids(&self) -> Vec<u32> {
        self.entries
            .iter()
            .filter(|e| e.active)
            .map(|e| e.class_id)
            .collect()
    }

    fn task_entries_mut(&mut self, task_id: u32) -> Result<impl Iterator<Item = &mut TextEntry>> {
        if !self.entries.iter().any(|e| e.task_id == task_id) {
            return Err(LadaError::Registry(format!("unknown task {task_id}")));
        }
        Ok(self.entries.iter_mut().filter(move |e| e.task_id == task_id))
    }

    /// Moves a task's classes into the seen set.
    pub fn activate_task(&mut self, task_id: u32) -> Result<()> {
        for e in self.task_entries_mut(task_id)? {
            e.active = true;
        }
        Ok(())
    }

    /// Freezes the vectors of a started task. Idempotent.
    pub fn complete_task(&mut self, task_id: u32) -> Result<()> {
        if self
            .entries
            .iter()
            .any(|e| e.task_id == task_id && !e.active)
        {
            return Err(LadaError::Registry(format!(
                "task {task_id} was never started"
            )));
        }
        for e in self.task_entries_mut(task_id)? {
            e.frozen = true;
        }
        Ok(())
    }

    /// s·⟨i, t⟩ over seen classes only.
    pub fn seen_logits(&self, i: &[f64]) -> Result<Vec<f64>> {
        self.check(i)?;
        Ok(self
            .entries
            .iter()
            .filter(|e| e.active)
            .map(|e| self.logit_scale * dot(i, &e.vector))
            .collect())
    }

    /// Seen classes first (registry order), then the bank's unseen classes.
    pub fn text_logits(&self, bank: Option<&UnseenBank>, i: &[f64]) -> Result<Vec<f64>> {
        let mut logits = self.seen_logits(i)?;
        if let Some(bank) = bank {
            if bank.dim != self.dim {
                return Err(LadaError::Shape {
                    expected: self.dim,
                    actual: bank.dim,
                });
            }
            if let Some(c) = bank
                .class_ids
                .iter()
                .find(|c| self.entry(**c).is_some_and(|e| e.active))
            {
                return Err(LadaError::Contract(format!(
                    "class {c} is both seen and in the unseen bank"
                )));
            }
            logits.extend(bank.vectors.iter().map(|t| self.logit_scale * dot(i, t)));
        }
        Ok(logits)
    }

    fn check(&self, i: &[f64]) -> Result<()> {
        if i.len() != self.dim {
            return Err(LadaError::Shape {
                expected: self.dim,
                actual: i.len(),
            });
        }
        Ok(())
    }
}

/// Vanilla text vectors of classes that have not been learned yet.
#[derive(Debug, Clone, PartialEq)]
pub struct UnseenBank {
    dim: usize,
    class_ids: Vec<u32>,
    vectors: Vec<Vec<f64>>,
}

impl UnseenBank {
    pub fn empty(dim: usize) -> Self {
        UnseenBank {
            dim,
            class_ids: Vec::new(),
            vectors: Vec::new(),
        }
    }

    pub fn new(dim: usize, classes: Vec<(u32, Vec<f64>)>) -> Result<Self> {
        let mut bank = UnseenBank::empty(dim);
        for (c, v) in classes {
            if v.len() != dim {
                return Err(LadaError::Shape {
                    expected: dim,
                    actual: v.len(),
                });
            }
            bank.class_ids.push(c);
            bank.vectors.push(v);
        }
        Ok(bank)
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }
}
