use autograd::{Element, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors of one model.
///
/// A trainable store holds gradient-tracking leaves; [`ParamStore::frozen`]
/// gives a copy whose tensors are constants.
#[derive(Clone, Debug)]
pub struct ParamStore<T: Element> {
    prefix: String,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    trainable: bool,
}

impl<T: Element> ParamStore<T> {
    pub fn new(prefix: impl Into<String>) -> Self {
        Self {
            prefix: prefix.into(),
            names: Vec::new(),
            tensors: Vec::new(),
            trainable: true,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn register(&mut self, name: &str, values: &[f64], shape: &[usize]) -> Result<ParamId> {
        let full = format!("{}/{name}", self.prefix);
        if self.names.contains(&full) {
            return Err(Error::Config(format!("duplicate parameter {full}")));
        }
        let data: Vec<T> = values.iter().map(|&v| T::of(v)).collect();
        let t = Tensor::param(data, shape)?;
        self.names.push(full);
        self.tensors.push(t);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces the values of tensor `index`, keeping its shape.
    pub fn set(&mut self, index: usize, data: Vec<T>) -> Result<()> {
        let shape = self.tensors[index].shape().to_vec();
        let t = Tensor::new(data, &shape)?;
        self.tensors[index] = if self.trainable { t.requires_grad_leaf() } else { t };
        Ok(())
    }

    /// Same values as constants: nothing downstream records gradients.
    pub fn frozen(&self) -> Self {
        Self {
            prefix: self.prefix.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::detach).collect(),
            trainable: false,
        }
    }

    /// `(name, shape, values)` for every tensor, widened to f64.
    pub fn snapshot(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.data().iter().map(|v| v.as_f64()).collect()))
            .collect()
    }

    /// Overwrites every tensor from `lookup(name)`, which must return a
    /// buffer of the right length.
    pub fn load_with(&mut self, mut lookup: impl FnMut(&str, &[usize]) -> Result<Vec<f64>>) -> Result<()> {
        for i in 0..self.tensors.len() {
            let shape = self.tensors[i].shape().to_vec();
            let values = lookup(&self.names[i], &shape)?;
            if values.len() != self.tensors[i].numel() {
                return Err(Error::Checkpoint(format!(
                    "{}: expected {} values, found {}",
                    self.names[i],
                    self.tensors[i].numel(),
                    values.len()
                )));
            }
            self.set(i, values.into_iter().map(T::of).collect())?;
        }
        Ok(())
    }
}

/// He-normal initialization for a layer with the given fan-in.
pub fn he_normal(rng: &mut impl Rng, fan_in: usize, count: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..count).map(|_| normal.sample(rng)).collect()
}
