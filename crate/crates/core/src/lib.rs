//! Depth-guided data-pipeline tooling for semantic segmentation.
//!
//! - [`depthmix`]: occlusion-aware compositing of sample pairs from their disparity maps
//! - [`pseudo_label`]: mean-teacher EMA, pseudo-labels, quality weights and loss terms
//! - [`selection`]: greedy diversity/uncertainty selection of images for annotation
//! - [`geo_match`]: geometric difference, geometry-matched source sampling, SSDA batch plans
//! - [`synth`]: procedural scenes and brute-force reference implementations
//! - [`cli`]: the `depthforge` command line

pub mod data;
pub mod depthmix;
pub mod error;
pub mod geo_match;
pub mod pseudo_label;
pub mod selection;
pub mod synth;
pub mod cli;

pub use error::{Error, Result};
