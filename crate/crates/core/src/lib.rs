//! Cross-modality angular metric learning.
//!
//! The crate bundles the pieces needed to train and evaluate a weight-shared
//! two-modality encoder with the bi-directional exponential angular triplet
//! (expAT) loss: exact metric primitives, a small reverse-mode graph, the
//! ranking and identity losses, common-space batch normalization, synthetic
//! data with bi-directional tuple sampling, an ADAM training loop with
//! checkpointing, and CMC/mAP retrieval evaluation.

pub mod ablation;
pub mod csbn;
pub mod data;
pub mod diff;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod losses;
pub mod metric;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
