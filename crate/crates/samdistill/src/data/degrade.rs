//! Synthetic degradations: rain streaks, Gaussian blur, Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use samdistill_core::ImageTensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind-specific degradation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Degradation {
    /// Bright oriented streaks. `angle_deg` is measured from vertical,
    /// `length` in pixels, `intensity` scales the streak layer.
    Rain {
        streak_count: usize,
        length: f64,
        angle_deg: f64,
        intensity: f64,
    },
    Blur { sigma: f64, kernel_size: usize },
    Noise { sigma: f64 },
}

/// A degradation together with the seed that makes it reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    #[serde(flatten)]
    pub degradation: Degradation,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn rain(streak_count: usize, length: f64, angle_deg: f64, intensity: f64, seed: u64) -> Self {
        Self {
            degradation: Degradation::Rain {
                streak_count,
                length,
                angle_deg,
                intensity,
            },
            seed,
        }
    }

    pub fn blur(sigma: f64, kernel_size: usize, seed: u64) -> Self {
        Self {
            degradation: Degradation::Blur { sigma, kernel_size },
            seed,
        }
    }

    pub fn noise(sigma: f64, seed: u64) -> Self {
        Self {
            degradation: Degradation::Noise { sigma },
            seed,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.degradation {
            Degradation::Rain { .. } => "rain",
            Degradation::Blur { .. } => "blur",
            Degradation::Noise { .. } => "noise",
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            degradation: self.degradation.clone(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Degradation(msg));
        match self.degradation {
            Degradation::Rain { length, intensity, .. } => {
                if !(0.0..=1.0).contains(&intensity) {
                    return bad(format!("rain intensity {intensity} outside [0, 1]"));
                }
                if !(length > 0.0) {
                    return bad(format!("rain streak length {length} must be positive"));
                }
            }
            Degradation::Blur { sigma, kernel_size } => {
                if !(sigma > 0.0) {
                    return bad(format!("blur sigma {sigma} must be positive"));
                }
                if kernel_size < 3 || kernel_size % 2 == 0 {
                    return bad(format!("blur kernel size {kernel_size} must be odd and >= 3"));
                }
            }
            Degradation::Noise { sigma } => {
                if !(sigma > 0.0) || sigma > 1.0 {
                    return bad(format!("noise sigma {sigma} must be in (0, 1]"));
                }
            }
        }
        Ok(())
    }
}

/// Applies whichever degradation `spec` describes.
pub fn degrade(img: &ImageTensor, spec: &DegradationSpec) -> Result<ImageTensor> {
    match spec.degradation {
        Degradation::Rain { .. } => add_rain_streaks(img, spec),
        Degradation::Blur { .. } => gaussian_blur(img, spec),
        Degradation::Noise { .. } => add_gaussian_noise(img, spec),
    }
}

fn wrong_kind(expected: &str, spec: &DegradationSpec) -> Error {
    Error::Degradation(format!("expected a {expected} spec, got {}", spec.kind()))
}

/// Bilinear sample of an `h x w` plane, zero outside.
fn sample(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let mut acc = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let (yy, xx) = (y0 + dy, x0 + dx);
            if yy >= 0.0 && xx >= 0.0 && (yy as usize) < h && (xx as usize) < w {
                acc += wy * wx * plane[yy as usize * w + xx as usize];
            }
        }
    }
    acc
}

/// Adds `value` at a fractional position, spread bilinearly.
fn splat(plane: &mut [f64], h: usize, w: usize, y: f64, x: f64, value: f64) {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let (yy, xx) = (y0 + dy, x0 + dx);
            if yy >= 0.0 && xx >= 0.0 && (yy as usize) < h && (xx as usize) < w {
                plane[yy as usize * w + xx as usize] += wy * wx * value;
            }
        }
    }
}

/// Additive white streaks: thin line segments along `angle_deg` with a
/// Gaussian brightness profile along their length, then motion-blurred in
/// the same direction. The result is clamped to `[0, 1]`.
pub fn add_rain_streaks(img: &ImageTensor, spec: &DegradationSpec) -> Result<ImageTensor> {
    let Degradation::Rain {
        streak_count,
        length,
        angle_deg,
        intensity,
    } = spec.degradation
    else {
        return Err(wrong_kind("rain", spec));
    };
    spec.validate()?;
    if streak_count == 0 || intensity == 0.0 {
        return Ok(img.clone());
    }
    let (h, w) = (img.height(), img.width());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let theta = angle_deg.to_radians();
    let (dir_y, dir_x) = (theta.cos(), theta.sin());

    let mut layer = vec![0.0; h * w];
    for _ in 0..streak_count {
        let cy = rng.random_range(-0.1..1.1) * h as f64;
        let cx = rng.random_range(-0.1..1.1) * w as f64;
        let len = length * rng.random_range(0.6..1.0);
        let brightness = rng.random_range(0.6..1.0);
        let half = len / 2.0;
        let profile_sigma = len / 4.0;
        let mut t = -half;
        while t <= half {
            let weight = (-(t * t) / (2.0 * profile_sigma * profile_sigma)).exp();
            splat(&mut layer, h, w, cy + t * dir_y, cx + t * dir_x, 0.5 * brightness * weight);
            t += 0.5;
        }
    }
    layer.iter_mut().for_each(|v| *v = v.min(1.0));

    // Motion blur along the streak direction.
    let taps = ((length / 4.0).round() as usize).max(3) | 1;
    let half_taps = (taps / 2) as f64;
    let mut blurred = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for i in 0..taps {
                let s = i as f64 - half_taps;
                acc += sample(&layer, h, w, y as f64 + s * dir_y, x as f64 + s * dir_x);
            }
            blurred[y * w + x] = acc / taps as f64;
        }
    }
    let peak = blurred.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        blurred.iter_mut().for_each(|v| *v /= peak);
    }

    ImageTensor::from_fn(img.channels(), h, w, |c, y, x| {
        (img.get(c, y, x) + intensity * blurred[y * w + x]).clamp(0.0, 1.0)
    })
    .map_err(Into::into)
}

/// Normalized 1-D Gaussian of odd length.
fn gaussian_kernel_1d(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Mirror index without repeating the edge sample (`-1 -> 1`, `n -> n - 2`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if n == 1 {
        return 0;
    }
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

/// Per-channel separable Gaussian blur with reflective borders.
pub fn gaussian_blur(img: &ImageTensor, spec: &DegradationSpec) -> Result<ImageTensor> {
    let Degradation::Blur { sigma, kernel_size } = spec.degradation else {
        return Err(wrong_kind("blur", spec));
    };
    spec.validate()?;
    let (h, w) = (img.height(), img.width());
    if kernel_size > h || kernel_size > w {
        return Err(Error::Degradation(format!(
            "blur kernel {kernel_size} larger than image {h}x{w}"
        )));
    }
    let k = gaussian_kernel_1d(kernel_size, sigma);
    let half = (kernel_size / 2) as isize;
    let mut out = Vec::with_capacity(img.len());
    for c in 0..img.channels() {
        let plane = img.plane(c);
        let mut horiz = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                horiz[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * plane[y * w + reflect(x as isize + i as isize - half, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                out.push(
                    k.iter()
                        .enumerate()
                        .map(|(i, kv)| kv * horiz[reflect(y as isize + i as isize - half, h) * w + x])
                        .sum(),
                );
            }
        }
    }
    ImageTensor::new(out, img.channels(), h, w).map_err(Into::into)
}

/// i.i.d. zero-mean Gaussian noise per value, clamped to `[0, 1]`.
pub fn add_gaussian_noise(img: &ImageTensor, spec: &DegradationSpec) -> Result<ImageTensor> {
    let Degradation::Noise { sigma } = spec.degradation else {
        return Err(wrong_kind("noise", spec));
    };
    spec.validate()?;
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Degradation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let data = img
        .as_slice()
        .iter()
        .map(|&v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    ImageTensor::new(data, img.channels(), img.height(), img.width()).map_err(Into::into)
}
