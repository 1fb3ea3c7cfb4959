use autograd::{Element, Tensor};
use rand::Rng;

use super::params::{he_normal, ParamId, ParamStore};
use crate::error::Result;

/// Negative slope of the leaky ReLU used throughout the restorers.
pub const LEAKY_SLOPE: f64 = 0.1;

pub fn act<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.leaky_relu(T::of(LEAKY_SLOPE))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    He,
    Zero,
}

/// Square "same" convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        init: Init,
    ) -> Result<Self> {
        let n = c_out * c_in * kernel * kernel;
        let w = match init {
            Init::He => he_normal(rng, c_in * kernel * kernel, n),
            Init::Zero => vec![0.0; n],
        };
        let weight = store.register(&format!("{name}.weight"), &w, &[c_out, c_in, kernel, kernel])?;
        let bias = store.register(&format!("{name}.bias"), &vec![0.0; c_out], &[c_out])?;
        Ok(Self {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
        })
    }

    pub fn forward<T: Element>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.conv2d(store.get(self.weight), Some(store.get(self.bias)))?)
    }
}
