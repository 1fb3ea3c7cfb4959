use autograd::{Element, Tensor};

use crate::error::{Error, Result};

/// Norm below which a masked feature counts as degenerate.
pub const RELATION_EPS: f64 = 1e-8;

/// Channel-broadcast product of features `[1, c, h, w]` (or `[c, h, w]`)
/// with masks `[n, h, w]` given as 0/1 values, giving `[n, c, h, w]`.
pub fn mask_guided_features<T: Element>(features: &Tensor<T>, masks: &Tensor<T>) -> Result<Tensor<T>> {
    let f = match features.rank() {
        3 => features.reshape(&[1, features.dim(0), features.dim(1), features.dim(2)])?,
        4 if features.dim(0) == 1 => features.clone(),
        _ => return Err(shape_err("mask_guided_features", features.shape(), masks.shape())),
    };
    if masks.rank() != 3 || masks.dim(1) != f.dim(2) || masks.dim(2) != f.dim(3) {
        return Err(shape_err("mask_guided_features", features.shape(), masks.shape()));
    }
    let m = masks.reshape(&[masks.dim(0), 1, masks.dim(1), masks.dim(2)])?;
    Ok(f.mul(&m)?)
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Tensor(autograd::Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

/// L2 norm of every row of a `[n, d]` tensor, read off the values.
pub fn row_norms<T: Element>(x: &Tensor<T>) -> Vec<f64> {
    let d = x.numel() / x.dim(0).max(1);
    x.data()
        .chunks(d.max(1))
        .map(|r| r.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt())
        .collect()
}

/// Cosine similarity between all rows of `x` (`[n, d]`, flattened masked
/// features). The result is made exactly symmetric by averaging with its
/// transpose.
///
/// Fails with [`Error::DegenerateRelation`] when `n < 2` or any row has norm
/// at most [`RELATION_EPS`]; callers filter such rows first.
pub fn relation_matrix<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 2 {
        return Err(shape_err("relation_matrix", x.shape(), &[]));
    }
    let norms = row_norms(x);
    let valid = norms.iter().filter(|&&n| n > RELATION_EPS).count();
    if x.dim(0) < 2 || valid < x.dim(0) {
        return Err(Error::DegenerateRelation { valid });
    }
    let gram = x.matmul(&x.t()?)?;
    let n = x.square().sum_axis(1)?.sqrt();
    let outer = n.matmul(&n.t()?)?;
    let r = gram.div(&outer)?;
    Ok(r.add(&r.t()?)?.scale(T::of(0.5)))
}

/// Dense relation matrix with validity checks, for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationMatrix {
    pub values: Vec<f64>,
    pub n: usize,
}

impl RelationMatrix {
    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 2 || s[0] != s[1] {
            return Err(shape_err("relation_matrix", s, &[]));
        }
        Ok(Self {
            values: t.data().iter().map(|v| v.as_f64()).collect(),
            n: s[0],
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Symmetric within `tol` and every entry in `[-1 - tol, 1 + tol]`.
    pub fn is_valid(&self, tol: f64) -> bool {
        self.max_asymmetry() <= tol && self.values.iter().all(|v| v.abs() <= 1.0 + tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use samdistill_core::reference::{masked_features_loop, relation_matrix_loop};

    fn t(v: Vec<f64>, shape: &[usize]) -> Tensor<f64> {
        Tensor::new(v, shape).unwrap()
    }

    #[test]
    fn full_and_empty_masks() {
        let f = t((0..2 * 16).map(|i| i as f64 + 1.0).collect(), &[1, 2, 4, 4]);
        let m = t([vec![1.0; 16], vec![0.0; 16]].concat(), &[2, 4, 4]);
        let out = mask_guided_features(&f, &m).unwrap();
        assert_eq!(out.shape(), &[2, 2, 4, 4]);
        assert_eq!(&out.data()[..32], f.data());
        assert!(out.data()[32..].iter().all(|&v| v == 0.0));
        assert!(mask_guided_features(&f, &t(vec![1.0; 9], &[1, 3, 3])).is_err());
    }

    #[test]
    fn checkerboard_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (c, h, w) = (3, 4, 6);
        let f: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(0.5..1.5)).collect();
        let board: Vec<u8> = (0..h * w).map(|p| ((p / w + p % w) % 2) as u8).collect();
        let m = t(board.iter().map(|&v| v as f64).collect(), &[1, h, w]);
        let out = mask_guided_features(&t(f.clone(), &[c, h, w]), &m).unwrap();
        let want = masked_features_loop(&f, c, h, w, std::slice::from_ref(&board));
        assert_eq!(out.data(), want[0].as_slice());
        for ch in 0..c {
            for p in 0..h * w {
                assert_eq!(out.data()[ch * h * w + p] != 0.0, board[p] == 1);
            }
        }
    }

    #[test]
    fn relation_special_cases() {
        let x = t(vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, -1.0, -2.0, -3.0], &[3, 3]);
        let r = RelationMatrix::from_tensor(&relation_matrix(&x).unwrap()).unwrap();
        assert!((r.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((r.get(0, 2) + 1.0).abs() < 1e-15);

        let f = t((0..16).map(|i| i as f64 + 1.0).collect(), &[1, 1, 4, 4]);
        let left: Vec<f64> = (0..16).map(|p| if p % 4 < 2 { 1.0 } else { 0.0 }).collect();
        let right: Vec<f64> = left.iter().map(|v| 1.0 - v).collect();
        let m = t([left, right].concat(), &[2, 4, 4]);
        let masked = mask_guided_features(&f, &m).unwrap().reshape(&[2, 16]).unwrap();
        let r = RelationMatrix::from_tensor(&relation_matrix(&masked).unwrap()).unwrap();
        assert_eq!(r.get(0, 1), 0.0);
        assert_eq!(r.get(1, 0), 0.0);
    }

    #[test]
    fn degenerate_rows_are_rejected() {
        let x = t(vec![1.0, 2.0, 0.0, 0.0], &[2, 2]);
        assert!(matches!(relation_matrix(&x), Err(Error::DegenerateRelation { valid: 1 })));
        let x = t(vec![1.0, 2.0], &[1, 2]);
        assert!(matches!(relation_matrix(&x), Err(Error::DegenerateRelation { .. })));
    }

    #[test]
    fn relation_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..30 {
            let n = rng.random_range(2..7);
            let d = rng.random_range(1..20);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let r = relation_matrix(&t(rows.concat(), &[n, d])).unwrap();
            let want = relation_matrix_loop(&rows);
            let rm = RelationMatrix::from_tensor(&r).unwrap();
            assert!(rm.is_valid(1e-12));
            assert_eq!(rm.max_asymmetry(), 0.0);
            for i in 0..n {
                for j in 0..n {
                    assert!((rm.get(i, j) - want[i][j]).abs() < 1e-12);
                }
            }
        }
    }
}
