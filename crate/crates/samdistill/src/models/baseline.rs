use autograd::{Element, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{act, Conv2d, Init};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineIRConfig {
    pub channels: usize,
    pub n_blocks: usize,
    pub in_channels: usize,
}

impl Default for BaselineIRConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            n_blocks: 4,
            in_channels: 3,
        }
    }
}

impl BaselineIRConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 8 {
            return Err(Error::Config(format!("baseline.channels must be >= 8, got {}", self.channels)));
        }
        if self.n_blocks < 2 {
            return Err(Error::Config(format!("baseline.n_blocks must be >= 2, got {}", self.n_blocks)));
        }
        if self.in_channels != 3 {
            return Err(Error::Config(format!("baseline.in_channels must be 3, got {}", self.in_channels)));
        }
        Ok(())
    }
}

/// First-stage restorer: head conv, `n_blocks` conv blocks and a
/// zero-initialized tail whose output is added to the input.
#[derive(Clone, Debug)]
pub struct BaselineIR<T: Element> {
    cfg: BaselineIRConfig,
    params: ParamStore<T>,
    head: Conv2d,
    blocks: Vec<Conv2d>,
    tail: Conv2d,
}

impl<T: Element> BaselineIR<T> {
    pub fn new(cfg: &BaselineIRConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new("baseline");
        let c = cfg.channels;
        let head = Conv2d::new(&mut params, &mut rng, "head", cfg.in_channels, c, 3, Init::He)?;
        let blocks = (0..cfg.n_blocks)
            .map(|i| Conv2d::new(&mut params, &mut rng, &format!("block{i}"), c, c, 3, Init::He))
            .collect::<Result<Vec<_>>>()?;
        let tail = Conv2d::new(&mut params, &mut rng, "tail", c, cfg.in_channels, 3, Init::Zero)?;
        Ok(Self {
            cfg: cfg.clone(),
            params,
            head,
            blocks,
            tail,
        })
    }

    pub fn config(&self) -> &BaselineIRConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Copy with constant parameters, for inference.
    pub fn frozen(&self) -> Self {
        Self {
            params: self.params.frozen(),
            ..self.clone()
        }
    }

    /// `x` is `[batch, 3, h, w]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.dim(1) != self.cfg.in_channels {
            return Err(Error::Config(format!(
                "baseline expects [batch, {}, h, w], got {:?}",
                self.cfg.in_channels,
                x.shape()
            )));
        }
        let mut h = act(&self.head.forward(&self.params, x)?);
        for b in &self.blocks {
            h = act(&b.forward(&self.params, &h)?);
        }
        Ok(x.add(&self.tail.forward(&self.params, &h)?)?)
    }
}
