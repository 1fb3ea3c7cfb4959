//! Full-reference quality metrics on RGB (or grayscale) images in `[0, 1]`.

use crate::error::{CoreError, Result};
use crate::image::ImageTensor;

/// PSNR reported for (near-)identical images instead of infinity.
pub const PSNR_CAP_DB: f64 = 100.0;

const MSE_FLOOR: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse(pred: &ImageTensor, target: &ImageTensor) -> Result<f64> {
    pred.ensure_same_shape(target)?;
    let sum: f64 = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Peak signal-to-noise ratio in dB with peak value 1.0, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(pred: &ImageTensor, target: &ImageTensor) -> Result<f64> {
    psnr_with_cap(pred, target, PSNR_CAP_DB)
}

pub fn psnr_with_cap(pred: &ImageTensor, target: &ImageTensor, cap_db: f64) -> Result<f64> {
    let mse = mse(pred, target)?;
    if mse < MSE_FLOOR {
        return Ok(cap_db);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(cap_db))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h x w` plane with `taps` on both axes.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * horiz[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean structural similarity: 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 1, evaluated at every fully
/// contained window position and averaged over positions and channels.
pub fn ssim(pred: &ImageTensor, target: &ImageTensor) -> Result<f64> {
    pred.ensure_same_shape(target)?;
    let (h, w) = (pred.height(), pred.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for c in 0..pred.channels() {
        let (x, y) = (pred.plane(c), target.plane(c));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
        let mu_x = filter_valid(x, h, w, &taps);
        let mu_y = filter_valid(y, h, w, &taps);
        let e_xx = filter_valid(&xx, h, w, &taps);
        let e_yy = filter_valid(&yy, h, w, &taps);
        let e_xy = filter_valid(&xy, h, w, &taps);
        let mut acc = 0.0;
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sx = e_xx[i] - mx * mx;
            let sy = e_yy[i] - my * my;
            let sxy = e_xy[i] - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sx + sy + c2));
        }
        total += acc / mu_x.len() as f64;
    }
    Ok(total / pred.channels() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, c: usize, h: usize, w: usize) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(c, h, w, |_, _, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let a = random_image(1, 3, 16, 16);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        assert_eq!(psnr_with_cap(&a, &a, 60.0).unwrap(), 60.0);
    }

    #[test]
    fn constant_offset_of_a_tenth_is_twenty_db() {
        let a = ImageTensor::filled(3, 8, 8, 0.5).unwrap();
        let b = ImageTensor::filled(3, 8, 8, 0.6).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_pixel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for amplitude in [0.01, 0.05, 0.2] {
            let target = random_image(3, 3, 32, 32);
            let noisy: Vec<f64> = target
                .as_slice()
                .iter()
                .map(|v| v + amplitude * (rng.random::<f64>() * 2.0 - 1.0))
                .collect();
            let pred = ImageTensor::new(noisy, 3, 32, 32).unwrap();
            let expected = reference::psnr_loop(pred.as_slice(), target.as_slice());
            assert!((psnr(&pred, &target).unwrap() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = ImageTensor::filled(3, 8, 8, 0.5).unwrap();
        let b = ImageTensor::filled(1, 8, 8, 0.5).unwrap();
        assert!(matches!(psnr(&a, &b), Err(CoreError::Shape { .. })));
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let a = random_image(11, 3, 32, 32);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = a.map(|v| 1.0 - v).unwrap();
        assert!(ssim(&inv, &a).unwrap() < 1.0);
    }

    #[test]
    fn ssim_matches_windowed_reference() {
        for seed in 0..3 {
            let a = random_image(100 + seed, 3, 32, 32);
            let b = random_image(200 + seed, 3, 32, 32);
            let fast = ssim(&a, &b).unwrap();
            let slow = reference::ssim_windowed(a.as_slice(), b.as_slice(), 3, 32, 32);
            assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
        }
    }

    #[test]
    fn ssim_rejects_images_smaller_than_window() {
        let a = ImageTensor::filled(1, 8, 8, 0.5).unwrap();
        assert!(ssim(&a, &a).is_err());
    }

    proptest! {
        #[test]
        fn psnr_symmetric_and_shift_invariant(seed in 0u64..500, shift in -0.5f64..0.5) {
            let a = random_image(seed, 1, 8, 8);
            let b = random_image(seed + 1000, 1, 8, 8);
            let p = psnr(&a, &b).unwrap();
            prop_assert!((p - psnr(&b, &a).unwrap()).abs() < 1e-12);
            let (a2, b2) = (a.map(|v| v + shift).unwrap(), b.map(|v| v + shift).unwrap());
            prop_assert!((p - psnr(&a2, &b2).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn psnr_decreases_with_mse(seed in 0u64..500, small in 0.001f64..0.1, extra in 0.001f64..0.2) {
            let a = random_image(seed, 1, 8, 8);
            let near = a.map(|v| v + small).unwrap();
            let far = a.map(|v| v + small + extra).unwrap();
            prop_assert!(psnr(&near, &a).unwrap() > psnr(&far, &a).unwrap());
        }

        #[test]
        fn ssim_is_symmetric(seed in 0u64..200) {
            let a = random_image(seed, 1, 16, 16);
            let b = random_image(seed + 7, 1, 16, 16);
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
