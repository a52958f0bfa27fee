//! Compact binary hashes for high-dimensional feature vectors.
//!
//! The pipeline learns 64-1024 bit codes from real-valued descriptors in two
//! phases: greedy layer-wise pretraining of stacked binary RBMs with a hashing
//! regularizer that keeps bits balanced and equiprobable, followed by optional
//! weakly-supervised Siamese fine-tuning with a double-margin contrastive loss.
//! LSH, ITQ and PQ reference schemes plus bit-packed Hamming ranking and
//! retrieval metrics (recall@R, MAP, UKB score, ROC AUC) round out the toolbox.
//!
//! Entry points:
//! - [`stack::train_stack`] / [`stack::DeepHashModel::encode`] for
//!   pretraining and hashing,
//! - [`siamese::estimate_margins`] / [`siamese::finetune`] for fine-tuning,
//! - [`baselines`] for the reference schemes,
//! - [`eval`] for ranking and metrics,
//! - [`commands`] for the file-driven runs behind the `deephash` binary.
//!
//! Everything is deterministic given explicit seeds; see the `examples/`
//! directory for end-to-end runs of each capability.

pub mod baselines;
pub mod bits;
pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
mod linalg;
pub mod rbm;
pub mod siamese;
pub mod stack;
pub mod synthetic;

pub use bits::BitMatrix;
pub use error::{Error, Result};
pub use io::{FeatureMatrix, Pair, PairSet, ThresholdVector};
pub use rbm::{RbmHyperParams, RbmLayer};
pub use stack::{Architecture, DeepHashModel};
