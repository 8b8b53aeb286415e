//! Deterministic clustering primitives: k-means for memory-block
//! initialization and spherical GMM fitting for prototype distillation.

mod gmm;
mod kmeans;

pub use gmm::{gmm_fit_spherical, log_sum_exp, GmmComponent, GmmModel, DEFAULT_VAR_FLOOR};
pub use kmeans::{kmeans, kmeans_with, KMeansOptions, KMeansResult};
