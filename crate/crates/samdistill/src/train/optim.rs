use autograd::{Element, Gradients};

use super::config::OptimizerConfig;
use crate::error::{Error, Result};
use crate::models::ParamStore;

/// Bias-corrected Adam over one parameter group.
///
/// Parameters without a gradient in a step keep their values and moments.
#[derive(Clone, Debug)]
pub struct Adam<T: Element> {
    cfg: OptimizerConfig,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(cfg: &OptimizerConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|p| vec![T::zero(); p.numel()]).collect();
        Self {
            cfg: cfg.clone(),
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, t: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Result<()> {
        let fits = |x: &[Vec<T>]| x.len() == self.m.len() && x.iter().zip(&self.m).all(|(a, b)| a.len() == b.len());
        if !fits(&m) || !fits(&v) {
            return Err(Error::Checkpoint("optimizer moments do not match the parameters".into()));
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        self.t += 1;
        let c = &self.cfg;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::one() - T::of(c.beta1.powi(self.t as i32));
        let bc2 = T::one() - T::of(c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        for i in 0..params.len() {
            let p = &params.tensors()[i];
            let Some(g) = grads.get(p) else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let updated: Vec<T> = p
                .data()
                .iter()
                .zip(g)
                .zip(m.iter_mut().zip(v.iter_mut()))
                .map(|((&w, &g), (m, v))| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    w - lr * mhat / (vhat.sqrt() + eps)
                })
                .collect();
            params.set(i, updated)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use autograd::Tensor;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new("p");
        store.register("w", &[1.0, -2.0, 3.0], &[3]).unwrap();
        let mut opt = Adam::new(&OptimizerConfig::default(), &store);
        let loss = store.tensors()[0].mul(&Tensor::new(vec![2.0, -0.5, 0.0], &[3]).unwrap()).unwrap().sum_all();
        let g = loss.backward().unwrap();
        opt.step(&mut store, &g).unwrap();
        let w = store.tensors()[0].data();
        assert!((w[0] - (1.0 - 1e-4)).abs() < 1e-9);
        assert!((w[1] - (-2.0 + 1e-4)).abs() < 1e-9);
        assert_eq!(w[2], 3.0);
        assert!(store.tensors()[0].requires_grad());
    }

    #[test]
    fn matches_scalar_reference() {
        let cfg = OptimizerConfig {
            lr: 0.05,
            ..Default::default()
        };
        let mut store = ParamStore::<f64>::new("p");
        store.register("w", &[0.7], &[1]).unwrap();
        let mut opt = Adam::new(&cfg, &store);
        let (mut w, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
        for t in 1..=20 {
            let g = store.tensors()[0].square().sum_all().backward().unwrap();
            opt.step(&mut store, &g).unwrap();
            let grad = 2.0 * w;
            m = 0.9 * m + 0.1 * grad;
            v = 0.999 * v + 0.001 * grad * grad;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.05 * mh / (vh.sqrt() + 1e-8);
            assert!((store.tensors()[0].data()[0] - w).abs() < 1e-12);
        }
    }

    #[test]
    fn untouched_params_keep_state() {
        let mut store = ParamStore::<f64>::new("p");
        store.register("a", &[1.0], &[1]).unwrap();
        store.register("b", &[1.0], &[1]).unwrap();
        let mut opt = Adam::new(&OptimizerConfig::default(), &store);
        let g = store.tensors()[0].sum_all().backward().unwrap();
        opt.step(&mut store, &g).unwrap();
        assert_eq!(store.tensors()[1].data(), &[1.0]);
        assert_eq!(opt.moments().0[1], vec![0.0]);
    }
}
