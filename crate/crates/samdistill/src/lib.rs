//! Cascaded image restoration with segmentation priors distilled into the
//! deployable first stage.
//!
//! A baseline restorer produces a first estimate; a refiner fuses that
//! estimate with segmentation masks through one fusion unit per block; the
//! refiner's output then teaches the baseline through an image-level
//! smooth-L1 term and a relation term over mask-gated perceptual features.
//! Only the baseline runs at inference.

pub mod cli;
pub mod data;
pub mod distill;
pub mod error;
pub mod experiment;
pub mod instrument;
pub mod models;
pub mod segmenter;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
