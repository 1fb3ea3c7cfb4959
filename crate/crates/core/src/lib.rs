//! Shared building blocks: image, mask and feature containers, PSNR/SSIM,
//! PNG and mask-file I/O, and the numeric verification toolkit (scalar
//! reference implementations and finite-difference gradients).

mod error;
mod feature;
mod image;
pub mod io;
mod mask;
pub mod metrics;
pub mod reference;
pub mod verify;

pub use error::{CoreError, Result};
pub use feature::FeatureMap;
pub use image::ImageTensor;
pub use mask::{resize_mask, MaskSet};
pub use metrics::{psnr, psnr_with_cap, ssim, PSNR_CAP_DB};
pub use verify::{finite_diff_grad, finite_diff_grads, GradCheckReport};
