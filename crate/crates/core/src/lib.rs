//! Tumor localization on whole-slide images from coarse annotations.
//!
//! The crate covers the full patch-level pipeline around an opaque patch
//! classifier:
//!
//! - [`pyramid`] and [`synth`]: multi-resolution slides, their directory
//!   format, and a deterministic synthetic-slide generator.
//! - [`tissue`]: colorization-value segmentation with Otsu thresholding.
//! - [`grid`]: aligned patch grids at 40×/20×/10×/5×.
//! - [`annot`]: polygon labels, coarse-annotation noise, dataset building.
//! - [`ensemble`]: prediction maps, upsampling and uniform fusion.
//! - [`metrics`]: MCC, AUROC, per-slide averaging, detection rates, Welch.
//! - [`stubs`]: deterministic classifiers emitting prediction maps.
//! - [`cli`]: the `tumormap` command-line stages over the file formats.

pub mod annot;
pub mod cli;
pub mod components;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod grid;
mod io;
pub mod metrics;
pub mod pipeline;
pub mod pyramid;
pub mod stubs;
pub mod synth;
pub mod tissue;

pub use error::{Error, Result};
