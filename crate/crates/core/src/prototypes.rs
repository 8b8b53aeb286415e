//! Prototype memory for replay.
//!
//! When a task completes, each of its classes is distilled into a spherical
//! Gaussian mixture of up to λ₂ components. Replay then uses either the raw
//! component means (weighted uniformly) or augmented prototypes
//! `p̃ = p + e·sqrt(Tr(Σ)/d)` with fresh standard-normal `e` (weighted by the
//! mixture weights). With Σ = σ²·I, `sqrt(Tr(Σ)/d)` is just σ.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LadaError, Result};
use crate::stats::{gmm_fit_spherical, DEFAULT_VAR_FLOOR};

const EM_MAX_ITER: usize = 200;
const EM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Spherical variance σ².
    pub variance: f64,
}

impl PrototypeComponent {
    /// sqrt(Tr(Σ) / d), which for Σ = σ²·I is σ.
    pub fn noise_scale(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypes {
    pub task_id: u32,
    pub class_id: u32,
    pub components: Vec<PrototypeComponent>,
}

pub fn distill_class(
    features: &[Vec<f64>],
    task_id: u32,
    class_id: u32,
    lambda2: usize,
    seed: u64,
) -> Result<ClassPrototypes> {
    distill_class_with_floor(features, task_id, class_id, lambda2, seed, DEFAULT_VAR_FLOOR)
}

/// As [`distill_class`] with an explicit variance floor.
pub fn distill_class_with_floor(
    features: &[Vec<f64>],
    task_id: u32,
    class_id: u32,
    lambda2: usize,
    seed: u64,
    var_floor: f64,
) -> Result<ClassPrototypes> {
    if lambda2 == 0 {
        return Err(LadaError::Parameter("lambda2 must be at least 1".into()));
    }
    if features.is_empty() {
        return Err(LadaError::EmptyInput(format!(
            "class {class_id} has no features to distill"
        )));
    }
    let k = lambda2.min(features.len());
    let model = gmm_fit_spherical(features, k, seed, EM_MAX_ITER, EM_TOL, var_floor)?;
    Ok(ClassPrototypes {
        task_id,
        class_id,
        components: model
            .components
            .into_iter()
            .map(|c| PrototypeComponent {
                weight: c.weight,
                mean: c.mean,
                variance: c.variance,
            })
            .collect(),
    })
}

impl ClassPrototypes {
    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// Draws one augmented prototype around component `l`.
    pub fn augment<R: Rng + ?Sized>(&self, l: usize, rng: &mut R) -> Result<Vec<f64>> {
        let comp = self.components.get(l).ok_or_else(|| {
            LadaError::Parameter(format!(
                "component {l} out of range for class {} ({} components)",
                self.class_id,
                self.components.len()
            ))
        })?;
        let scale = comp.noise_scale();
        Ok(comp
            .mean
            .iter()
            .map(|&p| {
                let e: f64 = rng.sample(StandardNormal);
                p + e * scale
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    /// π-weighted noisy prototypes.
    Augmented,
    /// Raw means, uniform weights per class.
    Plain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub vector: Vec<f64>,
    pub class_id: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    lambda2: usize,
    classes: Vec<ClassPrototypes>,
}

impl PrototypeSet {
    pub fn new(lambda2: usize) -> Self {
        PrototypeSet {
            lambda2,
            classes: Vec::new(),
        }
    }

    pub fn lambda2(&self) -> usize {
        self.lambda2
    }

    pub fn classes(&self) -> &[ClassPrototypes] {
        &self.classes
    }

    #[cfg(test)]
    pub(crate) fn classes_mut(&mut self) -> &mut [ClassPrototypes] {
        &mut self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, class_id: u32) -> Option<&ClassPrototypes> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }

    /// Adds a distilled class. Each class is distilled exactly once.
    pub fn insert(&mut self, protos: ClassPrototypes) -> Result<()> {
        if protos.components.is_empty() {
            return Err(LadaError::EmptyInput(format!(
                "class {} has no prototype components",
                protos.class_id
            )));
        }
        if self.get(protos.class_id).is_some() {
            return Err(LadaError::Registry(format!(
                "class {} already distilled",
                protos.class_id
            )));
        }
        self.classes.push(protos);
        Ok(())
    }

    pub fn num_components(&self) -> usize {
        self.classes.iter().map(|c| c.components.len()).sum()
    }

    /// One entry per (class, component). Augmented mode consumes `rng`;
    /// plain mode does not touch it.
    pub fn replay_batch<R: Rng + ?Sized>(&self, rng: &mut R, mode: ReplayMode) -> Vec<ReplayEntry> {
        let mut out = Vec::with_capacity(self.num_components());
        for class in &self.classes {
            let uniform = 1.0 / class.components.len() as f64;
            for (l, comp) in class.components.iter().enumerate() {
                let (vector, weight) = match mode {
                    ReplayMode::Plain => (comp.mean.clone(), uniform),
                    ReplayMode::Augmented => (
                        class.augment(l, rng).expect("index in range"),
                        comp.weight,
                    ),
                };
                out.push(ReplayEntry {
                    vector,
                    class_id: class.class_id,
                    weight,
                });
            }
        }
        out
    }
}
