use autograd::{Element, Tensor};

use crate::error::{Error, Result};

fn same_shape<T: Element>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Tensor(autograd::Error::Invalid {
            op: "loss",
            msg: format!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape()),
        }));
    }
    Ok(())
}

/// Mean over elements of `0.5 d^2` (`|d| <= 1`) or `|d| - 0.5`, `d = a - b`.
pub fn smooth_l1<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("smooth_l1", a, b)?;
    Ok(a.sub(b)?.smooth_l1().mean_all())
}

/// Mean absolute difference.
pub fn l1<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("l1", a, b)?;
    Ok(a.sub(b)?.abs().mean_all())
}

/// Mean of `|r1 - r2|` over the `N^2 - N` off-diagonal entries.
pub fn sgr_loss<T: Element>(r1: &Tensor<T>, r2: &Tensor<T>) -> Result<Tensor<T>> {
    let s = r1.shape();
    if s.len() != 2 || s[0] != s[1] || r2.shape() != s {
        return Err(Error::Tensor(autograd::Error::Invalid {
            op: "sgr_loss",
            msg: format!("need two equal square matrices, got {s:?} and {:?}", r2.shape()),
        }));
    }
    let n = s[0];
    if n < 2 {
        return Err(Error::DegenerateRelation { valid: n });
    }
    let off: Vec<T> = (0..n * n)
        .map(|i| if i / n == i % n { T::zero() } else { T::one() })
        .collect();
    let off = Tensor::new(off, &[n, n])?;
    let total = r1.sub(r2)?.abs().mul(&off)?.sum_all();
    Ok(total.scale(T::of(1.0 / (n * n - n) as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use samdistill_core::reference::smooth_l1_loop;

    fn t(v: Vec<f64>, shape: &[usize]) -> Tensor<f64> {
        Tensor::new(v, shape).unwrap()
    }

    #[test]
    fn smooth_l1_examples() {
        let z = t(vec![0.3; 4], &[4]);
        assert_eq!(smooth_l1(&z, &z).unwrap().item().unwrap(), 0.0);
        let a = t(vec![0.5; 4], &[4]);
        let zero = t(vec![0.0; 4], &[4]);
        assert!((smooth_l1(&a, &zero).unwrap().item().unwrap() - 0.125).abs() < 1e-15);
        let a = t(vec![2.0; 4], &[4]);
        assert!((smooth_l1(&a, &zero).unwrap().item().unwrap() - 1.5).abs() < 1e-15);
        let a = t(vec![0.2, 1.0, 3.0], &[3]);
        let got = smooth_l1(&a, &t(vec![0.0; 3], &[3])).unwrap().item().unwrap();
        assert!((got - (0.02 + 0.5 + 2.5) / 3.0).abs() < 1e-15);
        assert!(smooth_l1(&a, &zero).is_err());
    }

    #[test]
    fn smooth_l1_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let a: Vec<f64> = (0..30).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..30).map(|_| rng.random_range(-3.0..3.0)).collect();
            let got = smooth_l1(&t(a.clone(), &[30]), &t(b.clone(), &[30])).unwrap().item().unwrap();
            assert!((got - smooth_l1_loop(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn sgr_two_by_two() {
        let r1 = t(vec![1.0, 0.8, 0.8, 1.0], &[2, 2]);
        let r2 = t(vec![1.0, 0.3, 0.3, 1.0], &[2, 2]);
        assert!((sgr_loss(&r1, &r2).unwrap().item().unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(sgr_loss(&r1, &r1).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn sgr_ignores_diagonal_and_rejects_bad_shapes() {
        let r1 = t(vec![9.0, 0.1, 0.1, -4.0], &[2, 2]);
        let r2 = t(vec![1.0, 0.1, 0.1, 1.0], &[2, 2]);
        assert_eq!(sgr_loss(&r1, &r2).unwrap().item().unwrap(), 0.0);
        assert!(sgr_loss(&t(vec![1.0], &[1, 1]), &t(vec![1.0], &[1, 1])).is_err());
        assert!(sgr_loss(&r1, &t(vec![1.0; 9], &[3, 3])).is_err());
    }

    #[test]
    fn l1_is_mean_abs() {
        let got = l1(&t(vec![1.0, -2.0], &[2]), &t(vec![0.0, 0.0], &[2])).unwrap().item().unwrap();
        assert_eq!(got, 1.5);
    }
}
