//! Training and evaluation engine for a knowledge-graph-aware recommender
//! that jointly learns which KG triplets to keep (stochastic binary masks
//! optimized with an antithetic DisARM estimator) and which user-item
//! interactions to trust (dual-view divergence pruning with relation-aware
//! self-enhancement).
//!
//! The crate is organized along the pipeline:
//!
//! - [`data`]: interaction/KG file loading, splitting, controlled noise injection
//! - [`graph`]: immutable adjacency indices, triplet facet classification
//! - [`autodiff`]: tape-based reverse-mode differentiation, parameter store, Adam
//! - [`refiner`]: triplet mask bank, facet-routed KG aggregation, DisARM gradients
//! - [`denoiser`]: dual-view similarities, divergence pruning, self-enhancement
//! - [`model`]: end-to-end forward pass, loss, two-pass training step, ablations
//! - [`eval`]: all-ranking Recall@N / NDCG@N and robustness sweeps
//! - [`synth`]: seeded synthetic datasets with planted structure and noise
//! - [`checkpoint`]: named-tensor binary container with JSON metadata

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod denoiser;
pub mod eval;
pub mod graph;
pub mod model;
pub mod refiner;
pub mod rng;
pub mod synth;

pub use autodiff::{Tape, Tensor};
