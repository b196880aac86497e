//! Datasets, experiments, evaluation and serving for drag-conditioned
//! part-level generation.
//!
//! The algorithms live in `dragpart-core` (drags, world, motion search,
//! clustering) and `dragpart-diffusion` (models, training, sampling). This
//! crate adds persistence and orchestration on top: dataset export and
//! validation, TOML experiment configs, the PSNR/SSIM evaluation, the
//! segmentation sweep, motion benchmarks, the HTTP service and the CLI.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod hash;
pub mod imageio;
pub mod motion;
pub mod segmentation;
pub mod service;

pub use error::{Error, Result};
