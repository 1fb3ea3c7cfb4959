use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use autograd::{Element, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{act, Conv2d, Init};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::instrument;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SPFUnitConfig {
    pub hidden_channels: usize,
    /// Semantic selection attention on or off.
    pub attention: bool,
}

impl Default for SPFUnitConfig {
    fn default() -> Self {
        Self {
            hidden_channels: 16,
            attention: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinerConfig {
    pub channels: usize,
    pub n_blocks: usize,
    /// Width of the packed mask input; must equal the segmenter's `n_max`.
    pub mask_channels: usize,
    pub spf: SPFUnitConfig,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            n_blocks: 4,
            mask_channels: 8,
            spf: SPFUnitConfig::default(),
        }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels < 8 {
            return bad(format!("refiner.channels must be >= 8, got {}", self.channels));
        }
        if self.n_blocks < 2 {
            return bad(format!("refiner.n_blocks must be >= 2, got {}", self.n_blocks));
        }
        if self.mask_channels < 2 {
            return bad(format!("refiner.mask_channels must be >= 2, got {}", self.mask_channels));
        }
        if self.spf.hidden_channels < 8 {
            return bad(format!(
                "refiner.spf.hidden_channels must be >= 8, got {}",
                self.spf.hidden_channels
            ));
        }
        Ok(())
    }
}

/// Fuses a running feature with a block feature under mask guidance:
/// `concat(resize(f_in), f_block) -> conv+act -> conv+act`, then gated by
/// `sigmoid(conv1x1(masks))` when attention is on.
#[derive(Clone, Debug)]
pub struct SpfUnit {
    pub c_in: usize,
    pub c_block: usize,
    pub mask_channels: usize,
    fuse1: Conv2d,
    fuse2: Conv2d,
    gate: Option<Conv2d>,
}

impl SpfUnit {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        cfg: &SPFUnitConfig,
        c_in: usize,
        c_block: usize,
        mask_channels: usize,
    ) -> Result<Self> {
        if cfg.hidden_channels < 8 || c_in == 0 || c_block == 0 || mask_channels == 0 {
            return Err(Error::Config(format!(
                "invalid SPF unit {name}: c_in {c_in}, c_block {c_block}, hidden {}, masks {mask_channels}",
                cfg.hidden_channels
            )));
        }
        let fuse1 = Conv2d::new(store, rng, &format!("{name}.fuse1"), c_in + c_block, cfg.hidden_channels, 3, Init::He)?;
        let fuse2 = Conv2d::new(store, rng, &format!("{name}.fuse2"), cfg.hidden_channels, c_block, 3, Init::He)?;
        let gate = cfg
            .attention
            .then(|| Conv2d::new(store, rng, &format!("{name}.gate"), mask_channels, c_block, 1, Init::He))
            .transpose()?;
        Ok(Self {
            c_in,
            c_block,
            mask_channels,
            fuse1,
            fuse2,
            gate,
        })
    }

    pub fn has_attention(&self) -> bool {
        self.gate.is_some()
    }

    /// Gate convolution, if attention is enabled.
    pub fn gate(&self) -> Option<&Conv2d> {
        self.gate.as_ref()
    }

    /// Output has the shape of `f_block`.
    pub fn forward<T: Element>(
        &self,
        store: &ParamStore<T>,
        f_in: &Tensor<T>,
        f_block: &Tensor<T>,
        masks: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let (fi, fb, m) = (f_in.shape(), f_block.shape(), masks.shape());
        if fi.len() != 4 || fb.len() != 4 || m.len() != 4 || fi[1] != self.c_in || fb[1] != self.c_block || m[1] != self.mask_channels || fi[0] != fb[0] || m[0] != fb[0] {
            return Err(Error::Config(format!(
                "SPF unit expects inputs with {} / {} / {} channels, got {fi:?} / {fb:?} / {m:?}",
                self.c_in, self.c_block, self.mask_channels
            )));
        }
        let (h, w) = (fb[2], fb[3]);
        let resized = f_in.resize_bilinear(h, w)?;
        let z = Tensor::concat(&[resized, f_block.clone()], 1)?;
        let z = act(&self.fuse1.forward(store, &z)?);
        let z = act(&self.fuse2.forward(store, &z)?);
        match &self.gate {
            None => Ok(z),
            Some(gate) => {
                let a = gate.forward(store, &resize_nearest(masks, h, w)?)?.sigmoid();
                Ok(z.mul(&a)?)
            }
        }
    }
}

/// Nearest-neighbour resize of a constant `[b, c, h, w]` tensor; sources
/// sampled at `floor(y * H / h)`. Returned unchanged when sizes agree.
pub fn resize_nearest<T: Element>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if (h, w) == (oh, ow) {
        return Ok(x.clone());
    }
    let data = x.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        for y in 0..oh {
            let row = plane * h * w + (y * h / oh) * w;
            out.extend((0..ow).map(|xx| data[row + xx * w / ow]));
        }
    }
    Ok(Tensor::new(out, &[b, c, oh, ow])?)
}

/// Options for a single refiner forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct RefinerPass {
    /// Skip this SPF unit: its output is replaced by the block feature.
    pub bypass: Option<usize>,
}

/// Second-stage restorer with one SPF unit per block.
///
/// `F_1 = act(block_1(act(head(x))))`, `S_1 = spf_1(concat(x, M), F_1)`,
/// then `F_i = act(block_i(S_{i-1}))`, `S_i = spf_i(S_{i-1}, F_i)`, and the
/// output is `x + tail(S_n)` with a zero-initialized tail.
#[derive(Clone, Debug)]
pub struct Refiner<T: Element> {
    cfg: RefinerConfig,
    params: ParamStore<T>,
    head: Conv2d,
    blocks: Vec<Conv2d>,
    units: Vec<SpfUnit>,
    tail: Conv2d,
    activations: Arc<Vec<AtomicUsize>>,
}

impl<T: Element> Refiner<T> {
    pub fn new(cfg: &RefinerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new("refiner");
        let c = cfg.channels;
        let head = Conv2d::new(&mut params, &mut rng, "head", 3, c, 3, Init::He)?;
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        let mut units = Vec::with_capacity(cfg.n_blocks);
        for i in 0..cfg.n_blocks {
            blocks.push(Conv2d::new(&mut params, &mut rng, &format!("block{i}"), c, c, 3, Init::He)?);
            let c_in = if i == 0 { 3 + cfg.mask_channels } else { c };
            units.push(SpfUnit::new(&mut params, &mut rng, &format!("spf{i}"), &cfg.spf, c_in, c, cfg.mask_channels)?);
        }
        let tail = Conv2d::new(&mut params, &mut rng, "tail", c, 3, 3, Init::Zero)?;
        Ok(Self {
            cfg: cfg.clone(),
            params,
            head,
            blocks,
            tail,
            activations: Arc::new((0..units.len()).map(|_| AtomicUsize::new(0)).collect()),
            units,
        })
    }

    pub fn config(&self) -> &RefinerConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn units(&self) -> &[SpfUnit] {
        &self.units
    }

    pub fn frozen(&self) -> Self {
        Self {
            params: self.params.frozen(),
            ..self.clone()
        }
    }

    /// How many times each SPF unit has run, shared with frozen copies.
    pub fn unit_activations(&self) -> Vec<usize> {
        self.activations.iter().map(|a| a.load(Ordering::Relaxed)).collect()
    }

    /// `x` is `[batch, 3, h, w]`, `masks` is `[batch, mask_channels, h, w]`.
    pub fn forward(&self, x: &Tensor<T>, masks: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_with(x, masks, RefinerPass::default())
    }

    pub fn forward_with(&self, x: &Tensor<T>, masks: &Tensor<T>, pass: RefinerPass) -> Result<Tensor<T>> {
        instrument::refiner_forwarded();
        let (xs, ms) = (x.shape(), masks.shape());
        if xs.len() != 4 || xs[1] != 3 || ms.len() != 4 || ms[0] != xs[0] || ms[1] != self.cfg.mask_channels || ms[2..] != xs[2..] {
            return Err(Error::Config(format!(
                "refiner expects [b, 3, h, w] and [b, {}, h, w], got {xs:?} and {ms:?}",
                self.cfg.mask_channels
            )));
        }
        let first_in = Tensor::concat(&[x.clone(), masks.clone()], 1)?;
        let mut s = act(&self.head.forward(&self.params, x)?);
        for (i, (block, unit)) in self.blocks.iter().zip(&self.units).enumerate() {
            let f = act(&block.forward(&self.params, &s)?);
            s = if pass.bypass == Some(i) {
                f
            } else {
                self.activations[i].fetch_add(1, Ordering::Relaxed);
                let f_in = if i == 0 { &first_in } else { &s };
                unit.forward(&self.params, f_in, &f, masks)?
            };
        }
        Ok(x.add(&self.tail.forward(&self.params, &s)?)?)
    }
}
