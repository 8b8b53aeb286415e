//! Spherical Gaussian mixtures fitted by EM.
//!
//! Each component has density N(x; mean, variance · I). Responsibilities are
//! normalized in log space. Means start at the k-means centers of the same
//! seed; weights and variances start at the hard-assignment estimates.

use crate::error::{LadaError, Result};
use crate::linalg::sq_dist;
use crate::stats::kmeans;

pub const DEFAULT_VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Spherical variance σ²; the covariance is σ²·I.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub components: Vec<GmmComponent>,
    /// Total log-likelihood of the data before each M-step.
    pub log_likelihood_trace: Vec<f64>,
}

impl GmmModel {
    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn log_likelihood(&self, points: &[Vec<f64>]) -> f64 {
        let mut scratch = vec![0.0; self.components.len()];
        points.iter().map(|x| self.log_density(x, &mut scratch)).sum()
    }

    /// log p(x); `scratch` receives the per-component joint log densities.
    fn log_density(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let d = x.len() as f64;
        for (s, c) in scratch.iter_mut().zip(&self.components) {
            *s = c.weight.ln()
                - 0.5 * d * (2.0 * std::f64::consts::PI * c.variance).ln()
                - sq_dist(x, &c.mean) / (2.0 * c.variance);
        }
        log_sum_exp(scratch)
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn gmm_fit_spherical(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
    var_floor: f64,
) -> Result<GmmModel> {
    if points.is_empty() {
        return Err(LadaError::EmptyInput("mixture fit over zero points".into()));
    }
    if k == 0 || k > points.len() {
        return Err(LadaError::Parameter(format!(
            "{k} components requested for {} points",
            points.len()
        )));
    }
    if !(var_floor >= 0.0) {
        return Err(LadaError::Parameter(format!("variance floor {var_floor} is negative")));
    }
    let n = points.len();
    let d = points[0].len();

    let km = kmeans(points, k, seed, 300, 1e-12)?;
    let mut resp = vec![vec![0.0; k]; n];
    for (r, &a) in resp.iter_mut().zip(&km.assignment) {
        r[a] = 1.0;
    }
    let mut model = GmmModel {
        components: vec![
            GmmComponent {
                weight: 0.0,
                mean: vec![0.0; d],
                variance: 0.0,
            };
            k
        ],
        log_likelihood_trace: Vec::new(),
    };
    m_step(points, &resp, &mut model, var_floor);

    let mut prev = f64::NEG_INFINITY;
    for _ in 0..max_iter.max(1) {
        let ll = e_step(points, &model, &mut resp);
        if !ll.is_finite() {
            return Err(LadaError::Convergence(format!(
                "log-likelihood became {ll} after {} iterations",
                model.log_likelihood_trace.len()
            )));
        }
        model.log_likelihood_trace.push(ll);
        if ll - prev < tol {
            break;
        }
        prev = ll;
        m_step(points, &resp, &mut model, var_floor);
    }
    Ok(model)
}

/// Fills `resp` with posterior responsibilities and returns the total log-likelihood.
fn e_step(points: &[Vec<f64>], model: &GmmModel, resp: &mut [Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (x, r) in points.iter().zip(resp.iter_mut()) {
        let lse = model.log_density(x, r);
        for v in r.iter_mut() {
            *v = (*v - lse).exp();
        }
        total += lse;
    }
    total
}

fn m_step(points: &[Vec<f64>], resp: &[Vec<f64>], model: &mut GmmModel, var_floor: f64) {
    let d = points[0].len();
    let k = model.components.len();
    let mass: Vec<f64> = (0..k).map(|l| resp.iter().map(|r| r[l]).sum()).collect();
    let total: f64 = mass.iter().sum();
    for (l, comp) in model.components.iter_mut().enumerate() {
        if mass[l] <= 0.0 {
            // Starved component: keep its mean and variance, zero weight.
            comp.weight = 0.0;
            continue;
        }
        let mut mean = vec![0.0; d];
        for (x, r) in points.iter().zip(resp) {
            for (m, xi) in mean.iter_mut().zip(x) {
                *m += r[l] * xi;
            }
        }
        mean.iter_mut().for_each(|m| *m /= mass[l]);
        let spread: f64 = points
            .iter()
            .zip(resp)
            .map(|(x, r)| r[l] * sq_dist(x, &mean))
            .sum();
        comp.mean = mean;
        comp.variance = (spread / (d as f64 * mass[l])).max(var_floor);
        comp.weight = mass[l] / total;
    }
}
