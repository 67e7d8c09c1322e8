//! Statistical pipeline for voxel-based morphometry.
//!
//! The crate covers everything downstream of image preprocessing: NIfTI-1
//! volume I/O, synthetic phantom generation, design-matrix construction,
//! voxel-wise GLM fitting with t-contrasts, Gaussian-random-field cluster
//! inference (with a permutation oracle), connected-component cluster
//! extraction, ROI eigenvariate summaries, group statistics (t-tests,
//! Cohen's d, two-way ANOVA), and cross-validated logistic conversion
//! prediction. The `pipeline` module wires the stages together behind the
//! `vbm` CLI.

pub mod cluster;
pub mod cohort;
pub mod design;
pub mod eigenvariate;
pub mod error;
pub mod glm;
pub mod nifti;
pub mod phantom;
pub mod pipeline;
pub mod predict;
pub mod rft;
pub mod stats;
pub mod svg;
pub mod volume;

pub use error::{Error, Result};
