//! Semantic-edge-aware segmentation losses on a small reverse-mode autodiff.
//!
//! An edge net learns to map (perturbed) one-hot segmentation masks to their
//! semantic edge maps. Frozen, it then supervises a segmentation net by
//! matching its internal embeddings of the predicted and ground-truth masks.
//! The crate also ships the baselines (plain per-pixel cross-entropy, a
//! multi-task edge head, cross-entropy on predicted edges), a synthetic shapes
//! dataset, trimap evaluation and a command-line driver.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod grid;
pub mod losses;
pub mod mask;
pub mod nets;
pub mod ops;
pub mod plot;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use grid::Grid;
