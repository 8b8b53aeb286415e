//! Continual learning of image classes on frozen embeddings.
//!
//! Each task adds a block of memory rows per class and fine-tunes the class's
//! text vector, then freezes both. Earlier classes are replayed from Gaussian
//! prototypes instead of stored samples. See the guide in `book/`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod metrics;
pub mod prototypes;
pub mod stats;
pub mod text_head;
pub mod trainer;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/embeddings.md")]
mod book_embeddings {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/clustering.md")]
mod book_clustering {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/adapter.md")]
mod book_adapter {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/text_head.md")]
mod book_text_head {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/prototypes.md")]
mod book_prototypes {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod book_training {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/inference.md")]
mod book_inference {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/metrics.md")]
mod book_metrics {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/benchmark.md")]
mod book_benchmark {}
