//! Every differentiable op checked against central finite differences in f64.

use autograd::{Result, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Vec<f64> {
    let n = shape.iter().product();
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Compares d/dx sum(f(x) * weights) from backward against central differences.
fn check<F>(name: &str, shape: &[usize], x0: Vec<f64>, f: F)
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe = f(&Tensor::new(x0.clone(), shape).unwrap()).unwrap();
    let weights = Tensor::new(random(&mut rng, probe.shape(), -1.0, 1.0), probe.shape()).unwrap();
    let loss = |x: &Tensor<f64>| -> f64 {
        f(x).unwrap().mul(&weights).unwrap().sum_all().item().unwrap()
    };

    let leaf = Tensor::param(x0.clone(), shape).unwrap();
    let out = f(&leaf).unwrap().mul(&weights).unwrap().sum_all();
    let grads = out.backward().unwrap();
    let analytic = grads.get_or_zeros(&leaf);

    let eps = 1e-6;
    for k in 0..x0.len() {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[k] += eps;
        xm[k] -= eps;
        let num = (loss(&Tensor::new(xp, shape).unwrap()) - loss(&Tensor::new(xm, shape).unwrap())) / (2.0 * eps);
        let err = (num - analytic[k]).abs() / num.abs().max(analytic[k].abs()).max(1e-6);
        assert!(err < 1e-5, "{name}[{k}]: analytic {} vs numeric {num}", analytic[k]);
    }
}

fn away_from_kinks(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<f64> {
    random(rng, shape, 0.05, 2.5)
        .into_iter()
        .enumerate()
        .map(|(i, v)| if i % 2 == 0 { v } else { -v })
        .collect()
}

#[test]
fn unary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = [2, 3, 4];
    let x = away_from_kinks(&mut rng, &shape);
    check("neg", &shape, x.clone(), |t| Ok(t.neg()));
    check("abs", &shape, x.clone(), |t| Ok(t.abs()));
    check("square", &shape, x.clone(), |t| Ok(t.square()));
    check("relu", &shape, x.clone(), |t| Ok(t.relu()));
    check("leaky_relu", &shape, x.clone(), |t| Ok(t.leaky_relu(0.1)));
    check("sigmoid", &shape, x.clone(), |t| Ok(t.sigmoid()));
    check("smooth_l1", &shape, x.clone(), |t| Ok(t.smooth_l1()));
    check("scale", &shape, x.clone(), |t| Ok(t.scale(-3.5)));
    check("add_scalar", &shape, x.clone(), |t| Ok(t.add_scalar(0.25)));
    let pos = random(&mut rng, &shape, 0.1, 3.0);
    check("sqrt", &shape, pos, |t| Ok(t.sqrt()));
}

#[test]
fn binary_ops_with_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a_shape = [3, 4, 5];
    let other = Tensor::new(random(&mut rng, &[3, 1, 5], 0.5, 2.0), &[3, 1, 5]).unwrap();
    let x = random(&mut rng, &a_shape, -1.0, 1.0);
    check("add", &a_shape, x.clone(), |t| t.add(&other));
    check("sub", &a_shape, x.clone(), |t| other.sub(t));
    check("mul", &a_shape, x.clone(), |t| t.mul(&other));
    check("div num", &a_shape, x.clone(), |t| t.div(&other));

    // Gradient into the broadcast operand must reduce over the expanded axis.
    let big = Tensor::new(random(&mut rng, &a_shape, -1.0, 1.0), &a_shape).unwrap();
    let small = random(&mut rng, &[3, 1, 5], 0.5, 2.0);
    check("mul bcast rhs", &[3, 1, 5], small.clone(), |t| big.mul(t));
    check("div bcast rhs", &[3, 1, 5], small, |t| big.div(t));
}

#[test]
fn reductions_and_views() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = [2, 3, 4];
    let x = random(&mut rng, &shape, -1.0, 1.0);
    check("sum_axis0", &shape, x.clone(), |t| t.sum_axis(0));
    check("sum_axis2", &shape, x.clone(), |t| t.sum_axis(2));
    check("mean_all", &shape, x.clone(), |t| Ok(t.mean_all()));
    check("reshape", &shape, x.clone(), |t| t.reshape(&[6, 4]));
    check("select", &shape, x.clone(), |t| t.select(&[1, 0, 1]));
    check("transpose", &[6, 4], x.clone(), |t| t.t());
    let other = Tensor::new(random(&mut rng, &[2, 5, 4], -1.0, 1.0), &[2, 5, 4]).unwrap();
    check("concat", &shape, x, |t| Tensor::concat(&[other.clone(), t.clone(), other.clone()], 1));
}

#[test]
fn matmul_both_sides() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = Tensor::new(random(&mut rng, &[4, 3], -1.0, 1.0), &[4, 3]).unwrap();
    let a = Tensor::new(random(&mut rng, &[5, 4], -1.0, 1.0), &[5, 4]).unwrap();
    check("matmul lhs", &[5, 4], a.to_vec(), |t| t.matmul(&b));
    check("matmul rhs", &[4, 3], b.to_vec(), |t| a.matmul(t));
    check("gram", &[5, 4], a.to_vec(), |t| t.matmul(&t.t()?));
}

#[test]
fn conv_pool_resize() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs = [2, 3, 6, 4];
    let x = random(&mut rng, &xs, -1.0, 1.0);
    let w3 = Tensor::new(random(&mut rng, &[4, 3, 3, 3], -0.5, 0.5), &[4, 3, 3, 3]).unwrap();
    let w1 = Tensor::new(random(&mut rng, &[2, 3, 1, 1], -0.5, 0.5), &[2, 3, 1, 1]).unwrap();
    let w5 = Tensor::new(random(&mut rng, &[2, 3, 5, 5], -0.5, 0.5), &[2, 3, 5, 5]).unwrap();
    let bias = Tensor::new(random(&mut rng, &[4], -0.5, 0.5), &[4]).unwrap();
    let xt = Tensor::new(x.clone(), &xs).unwrap();

    check("conv3 input", &xs, x.clone(), |t| t.conv2d(&w3, Some(&bias)));
    check("conv1 input", &xs, x.clone(), |t| t.conv2d(&w1, None));
    check("conv5 input", &xs, x.clone(), |t| t.conv2d(&w5, None));
    check("conv3 weight", &[4, 3, 3, 3], w3.to_vec(), |t| xt.conv2d(t, Some(&bias)));
    check("conv1 weight", &[2, 3, 1, 1], w1.to_vec(), |t| xt.conv2d(t, None));
    check("conv bias", &[4], bias.to_vec(), |t| xt.conv2d(&w3, Some(t)));
    check("max_pool", &xs, x.clone(), |t| t.max_pool2d());
    check("bilinear down", &xs, x.clone(), |t| t.resize_bilinear(3, 2));
    check("bilinear up", &xs, x.clone(), |t| t.resize_bilinear(9, 7));
}

#[test]
fn conv_matches_direct_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (b, ci, co, h, w, k) = (2, 3, 2, 5, 7, 3);
    let x = random(&mut rng, &[b, ci, h, w], -1.0, 1.0);
    let wt = random(&mut rng, &[co, ci, k, k], -1.0, 1.0);
    let out = Tensor::new(x.clone(), &[b, ci, h, w])
        .unwrap()
        .conv2d(&Tensor::new(wt.clone(), &[co, ci, k, k]).unwrap(), None)
        .unwrap();
    for bi in 0..b {
        for o in 0..co {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let (sy, sx) = (y + ky - 1, xx + kx - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let xi = ((bi * ci + c) * h + sy as usize) * w + sx as usize;
                                let wi = ((o * ci + c) * k + ky as usize) * k + kx as usize;
                                acc += x[xi] * wt[wi];
                            }
                        }
                    }
                    let oi = ((bi * co + o) * h + y as usize) * w + xx as usize;
                    assert!((out.data()[oi] - acc).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn detach_and_frozen_inputs_get_no_gradient() {
    let p = Tensor::param(vec![1.0f64, 2.0], &[2]).unwrap();
    let frozen = Tensor::new(vec![3.0f64, 4.0], &[2]).unwrap();
    let y = p.mul(&frozen).unwrap().add(&p.detach().square()).unwrap().sum_all();
    let g = y.backward().unwrap();
    assert_eq!(g.get(&p).unwrap(), &[3.0, 4.0]);
    assert!(g.get(&frozen).is_none());
    assert_eq!(g.len(), 1);
}

#[test]
fn shared_subexpression_accumulates() {
    let p = Tensor::param(vec![0.5f64], &[1]).unwrap();
    let q = p.square();
    let y = q.add(&q).unwrap().add(&p).unwrap().sum_all();
    let g = y.backward().unwrap();
    assert!((g.get(&p).unwrap()[0] - (4.0 * 0.5 + 1.0)).abs() < 1e-15);
}

#[test]
fn shape_errors_are_reported() {
    let a = Tensor::<f32>::zeros(&[2, 3]);
    let b = Tensor::<f32>::zeros(&[3, 2]);
    assert!(a.add(&b).is_err());
    assert!(a.matmul(&a).is_err());
    assert!(a.reshape(&[5]).is_err());
    assert!(a.sum_all().backward().is_ok());
    assert!(a.backward().is_err());
}

proptest! {
    #[test]
    fn broadcast_add_matches_explicit_expansion(rows in 1usize..5, cols in 1usize..5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[rows, cols], -1.0, 1.0);
        let b = random(&mut rng, &[1, cols], -1.0, 1.0);
        let out = Tensor::new(a.clone(), &[rows, cols]).unwrap()
            .add(&Tensor::new(b.clone(), &[1, cols]).unwrap()).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                prop_assert_eq!(out.data()[r * cols + c], a[r * cols + c] + b[c]);
            }
        }
    }
}
