//! Deterministic simulator for federated learning with over-the-air
//! (analog) gradient aggregation and age-aware two-stage sparsification.
//!
//! The crate is organised around the training loop run by the edge server:
//!
//! - [`model_state`]: gradient, age and parameter vectors plus sparse masks.
//! - [`sparsifier`]: AgeTop-k and the Top-k, Random-k, Age-k and rTop-k baselines.
//! - [`channel`]: per-client fading and additive noise on the aggregated signal.
//! - [`task`]: training objectives, synthetic data and Dirichlet partitioning.
//! - [`server`]: the per-round orchestration loop.
//! - [`bound`]: numeric evaluation of the non-convex convergence bound.
//! - [`experiment`]: run configuration, metrics files, sweeps and bound checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bound;
pub mod channel;
pub mod error;
pub mod experiment;
pub mod model_state;
pub mod rng;
pub mod server;
pub mod sparsifier;
pub mod task;

pub use error::{Error, Result};
pub use model_state::{AgeVector, CompressedVector, GradientVector, ModelParams, SparseMask};
pub use sparsifier::{CompressorQuality, Strategy, StrategyKind};
