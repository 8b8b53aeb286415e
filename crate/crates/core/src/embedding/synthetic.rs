//! Seeded synthetic task streams.
//!
//! Every class owns a random unit direction. Image samples are the direction
//! plus isotropic Gaussian noise (per-coordinate standard deviation
//! `1 / separation`), projected back onto the unit sphere. The class's text
//! embedding is the direction with a smaller perturbation, also renormalized,
//! so that zero-shot text classification works but is not perfect.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ClassRegistry, EmbeddingRecord, EmbeddingSet};
use crate::error::{LadaError, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub seed: u64,
    pub tasks: usize,
    pub classes_per_task: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Inverse noise scale of image samples. `f64::INFINITY` gives noiseless samples.
    pub separation: f64,
    /// Expected L2 norm of the text perturbation before renormalization.
    pub text_noise: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            seed: 0,
            tasks: 5,
            classes_per_task: 10,
            dim: 64,
            train_per_class: 32,
            test_per_class: 20,
            separation: 8.0,
            text_noise: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStream {
    /// One training set per task, in learning order.
    pub train: Vec<EmbeddingSet>,
    pub test: EmbeddingSet,
    /// One record per class.
    pub text: EmbeddingSet,
    pub registry: ClassRegistry,
}

pub fn gen_synthetic_stream(params: &SyntheticParams) -> Result<SyntheticStream> {
    let p = params;
    for (name, v) in [
        ("tasks", p.tasks),
        ("classes_per_task", p.classes_per_task),
        ("dim", p.dim),
        ("train_per_class", p.train_per_class),
        ("test_per_class", p.test_per_class),
    ] {
        if v == 0 {
            return Err(LadaError::Parameter(format!("{name} must be at least 1")));
        }
    }
    if !(p.separation > 0.0) {
        return Err(LadaError::Parameter(format!(
            "separation must be positive, got {}",
            p.separation
        )));
    }
    if !(p.text_noise >= 0.0) || !p.text_noise.is_finite() {
        return Err(LadaError::Parameter(format!(
            "text_noise must be finite and non-negative, got {}",
            p.text_noise
        )));
    }

    let registry = ClassRegistry::from_class_counts(&vec![p.classes_per_task; p.tasks])?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let d = p.dim;
    let sample_sigma = 1.0 / p.separation;
    let text_sigma = p.text_noise / (d as f64).sqrt();

    let mut train = Vec::with_capacity(p.tasks);
    let mut test = Vec::new();
    let mut text = Vec::new();
    for task in registry.tasks() {
        let mut task_train = Vec::with_capacity(task.class_ids.len() * p.train_per_class);
        for &class_id in &task.class_ids {
            let direction = random_unit(&mut rng, d);
            let record = |vector: Vec<f64>| EmbeddingRecord {
                task_id: task.task_id,
                class_id,
                vector: vector.into_iter().map(|x| x as f32).collect(),
            };
            text.push(record(perturb(&mut rng, &direction, text_sigma)));
            for _ in 0..p.train_per_class {
                task_train.push(record(perturb(&mut rng, &direction, sample_sigma)));
            }
            for _ in 0..p.test_per_class {
                test.push(record(perturb(&mut rng, &direction, sample_sigma)));
            }
        }
        train.push(EmbeddingSet::new(d, task_train)?);
    }

    Ok(SyntheticStream {
        train,
        test: EmbeddingSet::new(d, test)?,
        text: EmbeddingSet::new(d, text)?,
        registry,
    })
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if linalg::normalize_in_place(&mut v) > 0.0 {
            return v;
        }
    }
}

fn perturb(rng: &mut ChaCha8Rng, direction: &[f64], sigma: f64) -> Vec<f64> {
    let mut v: Vec<f64> = direction
        .iter()
        .map(|&x| {
            let e: f64 = rng.sample(StandardNormal);
            // Keep the draw count fixed even at sigma = 0.
            if sigma > 0.0 {
                x + sigma * e
            } else {
                x
            }
        })
        .collect();
    linalg::normalize_in_place(&mut v);
    v
}
