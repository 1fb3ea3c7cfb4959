//! Plain scalar-loop reference implementations.
//!
//! These exist only to cross-check the optimized and differentiable code
//! paths: every function here is written directly from the defining
//! formula, in f64, with no shared helpers from the production code.

/// Mean squared error, one pixel at a time.
pub fn mse_loop(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc / a.len() as f64
}

pub fn psnr_loop(a: &[f64], b: &[f64]) -> f64 {
    let m = mse_loop(a, b);
    if m < 1e-10 {
        100.0
    } else {
        10.0 * (1.0 / m).log10()
    }
}

/// Mean SSIM computed window by window with an explicit 2-D Gaussian.
pub fn ssim_windowed(a: &[f64], b: &[f64], channels: usize, h: usize, w: usize) -> f64 {
    const WIN: usize = 11;
    let sigma = 1.5f64;
    let mut kernel = [[0.0f64; WIN]; WIN];
    let mut norm = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            norm += *v;
        }
    }
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let mut total = 0.0;
    for c in 0..channels {
        let at = |img: &[f64], y: usize, x: usize| img[(c * h + y) * w + x];
        let mut acc = 0.0;
        let mut count = 0usize;
        for y0 in 0..=h - WIN {
            for x0 in 0..=w - WIN {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..WIN {
                    for j in 0..WIN {
                        let k = kernel[i][j] / norm;
                        mx += k * at(a, y0 + i, x0 + j);
                        my += k * at(b, y0 + i, x0 + j);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..WIN {
                    for j in 0..WIN {
                        let k = kernel[i][j] / norm;
                        let dx = at(a, y0 + i, x0 + j) - mx;
                        let dy = at(b, y0 + i, x0 + j) - my;
                        vx += k * dx * dx;
                        vy += k * dy * dy;
                        cov += k * dx * dy;
                    }
                }
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / channels as f64
}

/// Mean of the unit-threshold smooth L1 over `a - b`.
pub fn smooth_l1_loop(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = (a[i] - b[i]).abs();
        acc += if d <= 1.0 { 0.5 * d * d } else { d - 0.5 };
    }
    acc / a.len() as f64
}

/// Mean absolute difference.
pub fn l1_loop(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += (a[i] - b[i]).abs();
    }
    acc / a.len() as f64
}

/// Pairwise cosine similarity between flattened vectors.
pub fn relation_matrix_loop(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut r = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let (mut dot, mut ni, mut nj) = (0.0, 0.0, 0.0);
            for k in 0..vectors[i].len() {
                dot += vectors[i][k] * vectors[j][k];
                ni += vectors[i][k] * vectors[i][k];
                nj += vectors[j][k] * vectors[j][k];
            }
            r[i][j] = dot / (ni.sqrt() * nj.sqrt());
        }
    }
    r
}

/// Mean absolute difference over the off-diagonal entries.
pub fn sgr_loss_loop(r1: &[Vec<f64>], r2: &[Vec<f64>]) -> f64 {
    let n = r1.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += (r1[i][j] - r2[i][j]).abs();
            }
        }
    }
    acc / (n * n - n) as f64
}

/// Masked features `F * m_n` for every mask, flattened channel-major.
/// `feature` is `[c, h, w]`, each mask is `[h, w]`.
pub fn masked_features_loop(feature: &[f64], c: usize, h: usize, w: usize, masks: &[Vec<u8>]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for m in masks {
        let mut v = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let i = (ch * h + y) * w + x;
                    v[i] = feature[i] * m[y * w + x] as f64;
                }
            }
        }
        out.push(v);
    }
    out
}

/// Normalized 2-D Gaussian kernel from the closed form.
pub fn gaussian_kernel_2d(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut k = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (dy, dx) = (i as f64 - c, j as f64 - c);
            k.push((-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp());
        }
    }
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}
