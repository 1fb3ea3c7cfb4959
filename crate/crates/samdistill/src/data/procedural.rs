//! Procedural clean images: layered value noise with flat-shaded shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use samdistill_core::ImageTensor;

use crate::error::Result;

struct ValueNoise {
    cells: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut impl Rng, cells: usize) -> Self {
        let lattice = (0..(cells + 1) * (cells + 1)).map(|_| rng.random::<f64>()).collect();
        Self { cells, lattice }
    }

    /// Smoothstep-interpolated lattice value at `(u, v)` in `[0, 1]^2`.
    fn at(&self, u: f64, v: f64) -> f64 {
        let n = self.cells as f64;
        let (gx, gy) = (u * n, v * n);
        let (x0, y0) = ((gx.floor() as usize).min(self.cells - 1), (gy.floor() as usize).min(self.cells - 1));
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (sx, sy) = (s(fx), s(fy));
        let stride = self.cells + 1;
        let l = |y: usize, x: usize| self.lattice[y * stride + x];
        let top = l(y0, x0) * (1.0 - sx) + l(y0, x0 + 1) * sx;
        let bottom = l(y0 + 1, x0) * (1.0 - sx) + l(y0 + 1, x0 + 1) * sx;
        top * (1.0 - sy) + bottom * sy
    }
}

enum Shape {
    Disc { cy: f64, cx: f64, r: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Disc { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Rect { y0, x0, y1, x1 } => (y0..=y1).contains(&y) && (x0..=x1).contains(&x),
        }
    }
}

/// Deterministic textured image in `[0, 1]` for a seed.
pub fn procedural_image(seed: u64, channels: usize, height: usize, width: usize) -> Result<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let octaves: Vec<(ValueNoise, f64)> = [(2, 0.5), (4, 0.25), (8, 0.15), (16, 0.1)]
        .into_iter()
        .map(|(cells, amp)| (ValueNoise::new(&mut rng, cells), amp))
        .collect();
    let tint: Vec<[f64; 2]> = (0..channels)
        .map(|_| [rng.random_range(0.1..0.5), rng.random_range(0.5..1.0)])
        .collect();

    let n_shapes = rng.random_range(3..7);
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let shape = if rng.random_bool(0.5) {
            Shape::Disc {
                cy: rng.random_range(0.0..1.0),
                cx: rng.random_range(0.0..1.0),
                r: rng.random_range(0.08..0.3),
            }
        } else {
            let (y0, x0) = (rng.random_range(0.0..0.8), rng.random_range(0.0..0.8));
            Shape::Rect {
                y0,
                x0,
                y1: y0 + rng.random_range(0.1..0.4),
                x1: x0 + rng.random_range(0.1..0.4),
            }
        };
        let color: Vec<f64> = (0..channels).map(|_| rng.random_range(0.0..1.0)).collect();
        let texture = rng.random_range(0.0..0.3);
        shapes.push((shape, color, texture));
    }

    let mut data = Vec::with_capacity(channels * height * width);
    for c in 0..channels {
        for y in 0..height {
            for x in 0..width {
                let (v, u) = ((y as f64 + 0.5) / height as f64, (x as f64 + 0.5) / width as f64);
                let noise: f64 = octaves.iter().map(|(o, amp)| amp * o.at(u, v)).sum();
                let mut value = tint[c][0] + (tint[c][1] - tint[c][0]) * noise;
                for (shape, color, texture) in &shapes {
                    if shape.contains(v, u) {
                        value = color[c] * (1.0 - texture) + texture * noise;
                    }
                }
                data.push(value.clamp(0.0, 1.0));
            }
        }
    }
    Ok(ImageTensor::new(data, channels, height, width)?)
}

/// `count` distinct RGB base images derived from one seed.
pub fn procedural_bases(count: usize, seed: u64, height: usize, width: usize) -> Result<Vec<ImageTensor>> {
    (0..count)
        .map(|i| procedural_image(sub_seed(seed, i as u64), 3, height, width))
        .collect()
}

/// Decorrelated child seed (splitmix64 finalizer).
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_textured() {
        let a = procedural_image(7, 3, 64, 64).unwrap();
        assert_eq!(a, procedural_image(7, 3, 64, 64).unwrap());
        assert_ne!(a, procedural_image(8, 3, 64, 64).unwrap());
        assert!(a.variance() > 1e-3);
        assert!(a.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sub_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| sub_seed(3, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
