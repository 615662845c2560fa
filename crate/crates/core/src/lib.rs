//! Grayscale image denoising by collaborative support-agnostic sparse recovery.
//!
//! Every pixel gets an `N×N` patch. Patches are normalized, grouped with
//! similar patches, and sparse-coded over an overcomplete cosine + Haar
//! dictionary. The per-tap active probabilities of each group are fused into
//! a prior for a second recovery pass, whose estimates are averaged back into
//! an image. Results for several patch sizes are averaged.

pub mod baseline;
pub mod cli;
pub mod collab;
pub mod dictionary;
pub mod error;
pub mod grouping;
pub mod image;
pub mod metrics;
pub mod patch;
pub mod pipeline;
pub mod sabmp;

pub use error::{Error, Result};
pub use image::{Image, NoiseSpec};
