//! Label-specific memory blocks and the fixed exponential-similarity classifier.
//!
//! Every class owns a block of up to λ₁ memory rows, initialized from the
//! k-means centers of that class's training features. For an image feature
//! `i`, slot `l` of class `j` reads `⟨w_j(l), i⟩`, and the class logit is
//!
//! ```text
//! logit_j(i) = Σ_l exp(−β (1 − ⟨w_j(l), i⟩))
//! ```
//!
//! a soft nearest-neighbor score. Blocks are appended task by task; appending
//! freezes every earlier block, so the logits of earlier classes never change.

use serde::{Deserialize, Serialize};

use crate::error::{LadaError, Result};
use crate::linalg::{dot, normalize_in_place};
use crate::stats::kmeans;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Memory rows per class (clamped per class to its sample count).
    pub lambda1: usize,
    /// Sharpness of the similarity kernel.
    pub beta: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            lambda1: 16,
            beta: 5.0,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 == 0 {
            return Err(LadaError::Parameter("lambda1 must be at least 1".into()));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(LadaError::Parameter(format!(
                "beta must be positive and finite, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// exp(−β(1 − x)): maps a similarity in [−1, 1] to (0, 1].
#[inline]
pub fn similarity_kernel(x: f64, beta: f64) -> f64 {
    (-beta * (1.0 - x)).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMemoryBlock {
    pub task_id: u32,
    pub class_id: u32,
    dim: usize,
    /// Row-major `rows × dim`.
    weights: Vec<f64>,
    pub frozen: bool,
}

impl LabelMemoryBlock {
    pub fn new(task_id: u32, class_id: u32, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || weights.is_empty() || !weights.len().is_multiple_of(dim) {
            return Err(LadaError::Shape {
                expected: dim.max(1),
                actual: weights.len(),
            });
        }
        Ok(LabelMemoryBlock {
            task_id,
            class_id,
            dim,
            weights,
            frozen: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// λ₁′, the number of memory rows.
    pub fn num_rows(&self) -> usize {
        self.weights.len() / self.dim
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.weights[l * self.dim..(l + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    /// Σ_l exp(−β(1 − ⟨w(l), i⟩)).
    pub fn logit(&self, i: &[f64], beta: f64) -> f64 {
        self.rows().map(|w| similarity_kernel(dot(w, i), beta)).sum()
    }
}

/// Clusters one class's features into `min(λ₁, count)` unit-norm memory rows.
pub fn init_block(
    features: &[Vec<f64>],
    task_id: u32,
    class_id: u32,
    config: &AdapterConfig,
    seed: u64,
) -> Result<LabelMemoryBlock> {
    config.validate()?;
    if features.is_empty() {
        return Err(LadaError::EmptyInput(format!(
            "class {class_id} has no training features"
        )));
    }
    let dim = features[0].len();
    let k = config.lambda1.min(features.len());
    let clusters = kmeans(features, k, seed, 300, 1e-12)?;
    let mut weights = Vec::with_capacity(k * dim);
    for mut c in clusters.centers {
        normalize_in_place(&mut c);
        weights.extend_from_slice(&c);
    }
    LabelMemoryBlock::new(task_id, class_id, dim, weights)
}

/// The ordered collection of memory blocks; block order fixes logit order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterState {
    config: AdapterConfig,
    dim: usize,
    blocks: Vec<LabelMemoryBlock>,
}

impl AdapterState {
    pub fn new(config: AdapterConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(LadaError::Parameter("dimension must be positive".into()));
        }
        Ok(AdapterState {
            config,
            dim,
            blocks: Vec::new(),
        })
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[LabelMemoryBlock] {
        &self.blocks
    }

    pub(crate) fn blocks_mut(&mut self) -> &mut [LabelMemoryBlock] {
        &mut self.blocks
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.blocks.len()
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.blocks.iter().map(|b| b.class_id).collect()
    }

    pub fn block(&self, class_id: u32) -> Option<&LabelMemoryBlock> {
        self.blocks.iter().find(|b| b.class_id == class_id)
    }

    /// Σ over classes of λ₁′·d.
    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(LabelMemoryBlock::param_count).sum()
    }

    fn check_input(&self, i: &[f64]) -> Result<()> {
        if i.len() != self.dim {
            return Err(LadaError::Shape {
                expected: self.dim,
                actual: i.len(),
            });
        }
        Ok(())
    }

    /// Per class, the inner products of each memory row with `i`.
    pub fn phi_map(&self, i: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(i)?;
        Ok(self
            .blocks
            .iter()
            .map(|b| b.rows().map(|w| dot(w, i)).collect())
            .collect())
    }

    /// One logit per class, in block order.
    pub fn lada_logits(&self, i: &[f64]) -> Result<Vec<f64>> {
        self.check_input(i)?;
        let beta = self.config.beta;
        Ok(self.blocks.iter().map(|b| b.logit(i, beta)).collect())
    }

    /// Appends the blocks of a new task and freezes every existing block.
    pub fn expand_for_task(&mut self, new_blocks: Vec<LabelMemoryBlock>) -> Result<()> {
        for (n, b) in new_blocks.iter().enumerate() {
            if b.dim != self.dim {
                return Err(LadaError::Shape {
                    expected: self.dim,
                    actual: b.dim,
                });
            }
            if self.block(b.class_id).is_some()
                || new_blocks[..n].iter().any(|o| o.class_id == b.class_id)
            {
                return Err(LadaError::Registry(format!(
                    "class {} already has a memory block",
                    b.class_id
                )));
            }
        }
        for b in &mut self.blocks {
            b.frozen = true;
        }
        self.blocks.extend(new_blocks);
        Ok(())
    }

    pub fn freeze_task(&mut self, task_id: u32) -> Result<()> {
        let mut found = false;
        for b in self.blocks.iter_mut().filter(|b| b.task_id == task_id) {
            b.frozen = true;
            found = true;
        }
        if found {
            Ok(())
        } else {
            Err(LadaError::Registry(format!(
                "no memory blocks for task {task_id}"
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        normalize_in_place(&mut v);
        v
    }

    fn cfg(lambda1: usize, beta: f64) -> AdapterConfig {
        AdapterConfig { lambda1, beta }
    }

    fn random_state(rng: &mut ChaCha8Rng, d: usize, classes: usize, rows: usize) -> AdapterState {
        let mut s = AdapterState::new(cfg(rows, 3.0), d).unwrap();
        let blocks = (0..classes as u32)
            .map(|c| {
                let w: Vec<f64> = (0..rows).flat_map(|_| unit(rng, d)).collect();
                LabelMemoryBlock::new(0, c, d, w).unwrap()
            })
            .collect();
        s.expand_for_task(blocks).unwrap();
        s
    }

    #[test]
    fn single_sample_block_is_that_sample() {
        let x = vec![0.6, 0.8];
        let b = init_block(std::slice::from_ref(&x), 0, 0, &cfg(16, 5.0), 1).unwrap();
        assert_eq!(b.num_rows(), 1);
        assert_eq!(b.row(0), x.as_slice());
        assert!(!b.frozen);
    }

    #[test]
    fn lambda_equal_to_count_keeps_the_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let xs: Vec<Vec<f64>> = (0..16).map(|_| unit(&mut rng, 5)).collect();
        let b = init_block(&xs, 0, 3, &cfg(16, 5.0), 2).unwrap();
        assert_eq!(b.num_rows(), 16);
        for x in &xs {
            assert!(b.rows().any(|w| w.iter().zip(x).all(|(a, c)| (a - c).abs() < 1e-12)));
        }
    }

    #[test]
    fn rows_are_unit_norm_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<Vec<f64>> = (0..40).map(|_| unit(&mut rng, 6)).collect();
        let b = init_block(&xs, 0, 0, &cfg(4, 5.0), 0).unwrap();
        for w in b.rows() {
            assert!((crate::linalg::norm(w) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn self_similarity_logit_is_one_for_any_beta() {
        let i = vec![0.0, 1.0, 0.0];
        for beta in [0.1, 1.0, 5.0, 50.0] {
            let mut s = AdapterState::new(cfg(1, beta), 3).unwrap();
            s.expand_for_task(vec![LabelMemoryBlock::new(0, 0, 3, i.clone()).unwrap()])
                .unwrap();
            assert_eq!(s.phi_map(&i).unwrap(), vec![vec![1.0]]);
            assert_eq!(s.lada_logits(&i).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn orthogonal_row_at_beta_one_is_inverse_e() {
        let mut s = AdapterState::new(cfg(1, 1.0), 2).unwrap();
        s.expand_for_task(vec![LabelMemoryBlock::new(0, 0, 2, vec![1.0, 0.0]).unwrap()])
            .unwrap();
        let z = s.lada_logits(&[0.0, 1.0]).unwrap()[0];
        assert!((z - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert_eq!(s.phi_map(&[0.0, 1.0]).unwrap(), vec![vec![0.0]]);
    }

    #[test]
    fn phi_and_logits_match_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_state(&mut rng, 7, 4, 3);
        let i = unit(&mut rng, 7);
        let phi = s.phi_map(&i).unwrap();
        let logits = s.lada_logits(&i).unwrap();
        for (c, b) in s.blocks().iter().enumerate() {
            let mut total = 0.0;
            for l in 0..b.num_rows() {
                let mut acc = 0.0;
                for t in 0..7 {
                    acc += b.weights()[l * 7 + t] * i[t];
                }
                assert!((phi[c][l] - acc).abs() < 1e-12);
                total += (-3.0 * (1.0 - acc)).exp();
            }
            assert!((logits[c] - total).abs() < 1e-12);
            // h∘φ through the phi map
            let via_phi: f64 = phi[c].iter().map(|&x| similarity_kernel(x, 3.0)).sum();
            assert!((logits[c] - via_phi).abs() < 1e-12);
        }
    }

    #[test]
    fn logits_respect_kernel_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = random_state(&mut rng, 6, 5, 4);
        for _ in 0..50 {
            let i = unit(&mut rng, 6);
            for (slots, z) in s.phi_map(&i).unwrap().iter().zip(s.lada_logits(&i).unwrap()) {
                for &x in slots {
                    let k = similarity_kernel(x, 3.0);
                    assert!(k >= (-6.0f64).exp() - 1e-15 && k <= 1.0 + 1e-15);
                }
                assert!(z > 0.0 && z <= 4.0 + 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_state(&mut rng, 4, 2, 2);
        assert!(matches!(s.lada_logits(&[1.0, 0.0]), Err(LadaError::Shape { .. })));
    }

    #[test]
    fn expansion_freezes_and_preserves_old_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = random_state(&mut rng, 5, 3, 2);
        let probe = unit(&mut rng, 5);
        let before = s.lada_logits(&probe).unwrap();
        let new = (3..5)
            .map(|c| LabelMemoryBlock::new(1, c, 5, unit(&mut rng, 5)).unwrap())
            .collect();
        s.expand_for_task(new).unwrap();
        let after = s.lada_logits(&probe).unwrap();
        assert_eq!(after.len(), 5);
        assert_eq!(&after[..3], before.as_slice());
        assert!(s.blocks()[..3].iter().all(|b| b.frozen));
        assert!(s.blocks()[3..].iter().all(|b| !b.frozen));

        let dup = vec![LabelMemoryBlock::new(2, 4, 5, unit(&mut rng, 5)).unwrap()];
        assert!(matches!(s.expand_for_task(dup), Err(LadaError::Registry(_))));
    }

    #[test]
    fn freeze_is_idempotent_and_checks_task() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = random_state(&mut rng, 3, 2, 1);
        s.freeze_task(0).unwrap();
        let snapshot = s.clone();
        s.freeze_task(0).unwrap();
        assert_eq!(s, snapshot);
        assert!(matches!(s.freeze_task(9), Err(LadaError::Registry(_))));
    }

    #[test]
    fn parameter_count_scales_with_classes() {
        // 1100 classes × 16 rows × 512 dims
        assert_eq!(1100 * 16 * 512, 9_011_200);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_state(&mut rng, 8, 3, 2);
        assert_eq!(s.param_count(), 3 * 2 * 8);
    }

    #[test]
    fn large_beta_picks_the_nearest_memory_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut s = random_state(&mut rng, 6, 6, 3);
        s.config.beta = 400.0;
        for _ in 0..30 {
            let i = unit(&mut rng, 6);
            let nearest = s
                .blocks()
                .iter()
                .enumerate()
                .map(|(c, b)| (c, b.rows().map(|w| dot(w, &i)).fold(f64::MIN, f64::max)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            let logits = s.lada_logits(&i).unwrap();
            assert_eq!(crate::linalg::argmax(&logits), Some(nearest));
        }
    }
}
