//! Frozen stride-8, 512-channel feature extractor.
//!
//! Weight files are safetensors archives holding one `<layer>.weight`
//! (`[c_out, c_in, 3, 3]`) and `<layer>.bias` (`[c_out]`) pair per
//! convolution, in f32 or f64. Layer names:
//!
//! * `vgg16`: `features.0`, `features.2`, `features.5`, `features.7`,
//!   `features.10`, `features.12`, `features.14`, `features.17`,
//!   `features.19`, `features.21` (the torchvision VGG-16 layout up to
//!   `relu4_3`, with max pooling after layers 2, 7 and 14).
//! * `compact`: `conv0` .. `conv3` (3→16, 16→32, 32→64, 64→512), max
//!   pooling after each of the first three.
//!
//! Inputs in `[0, 1]` are normalized with the ImageNet mean and std first.

use std::fs;
use std::path::Path;

use autograd::{Element, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::instrument;
use crate::models::he_normal;

pub const PERCEPTUAL_CHANNELS: usize = 512;
pub const PERCEPTUAL_STRIDE: usize = 8;
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptualKind {
    Pretrained,
    FixedRandom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptualArch {
    Vgg16,
    Compact,
}

impl PerceptualArch {
    /// `(name, c_in, c_out, pool_after)` per convolution.
    fn layers(self) -> Vec<(String, usize, usize, bool)> {
        match self {
            PerceptualArch::Vgg16 => [
                (0, 3, 64, false),
                (2, 64, 64, true),
                (5, 64, 128, false),
                (7, 128, 128, true),
                (10, 128, 256, false),
                (12, 256, 256, false),
                (14, 256, 256, true),
                (17, 256, 512, false),
                (19, 512, 512, false),
                (21, 512, 512, false),
            ]
            .into_iter()
            .map(|(i, a, b, p)| (format!("features.{i}"), a, b, p))
            .collect(),
            PerceptualArch::Compact => [(3, 16, true), (16, 32, true), (32, 64, true), (64, 512, false)]
                .into_iter()
                .enumerate()
                .map(|(i, (a, b, p))| (format!("conv{i}"), a, b, p))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptualConfig {
    pub kind: PerceptualKind,
    pub arch: PerceptualArch,
    pub out_channels: usize,
    pub stride: usize,
    /// Safetensors weights for `pretrained`; empty means unset.
    pub weights_path: String,
    pub seed: u64,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        Self {
            kind: PerceptualKind::FixedRandom,
            arch: PerceptualArch::Compact,
            out_channels: PERCEPTUAL_CHANNELS,
            stride: PERCEPTUAL_STRIDE,
            weights_path: String::new(),
            seed: 0,
        }
    }
}

impl PerceptualConfig {
    pub fn fixed_random(arch: PerceptualArch, seed: u64) -> Self {
        Self {
            arch,
            seed,
            ..Self::default()
        }
    }

    pub fn pretrained(arch: PerceptualArch, weights_path: impl Into<String>) -> Self {
        Self {
            kind: PerceptualKind::Pretrained,
            arch,
            weights_path: weights_path.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels != PERCEPTUAL_CHANNELS || self.stride != PERCEPTUAL_STRIDE {
            return Err(Error::Config(format!(
                "perceptual features are fixed at {PERCEPTUAL_CHANNELS} channels, stride {PERCEPTUAL_STRIDE}; got {} / {}",
                self.out_channels, self.stride
            )));
        }
        if self.kind == PerceptualKind::Pretrained && self.weights_path.is_empty() {
            return Err(Error::Config("perceptual.weights_path is required for pretrained features".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Layer<T: Element> {
    name: String,
    weight: Tensor<T>,
    bias: Tensor<T>,
    pool: bool,
}

/// The extractor. Weights are constants, so gradients pass through to the
/// input but are never produced for the weights themselves.
#[derive(Clone, Debug)]
pub struct Perceptual<T: Element> {
    cfg: PerceptualConfig,
    layers: Vec<Layer<T>>,
    mean: Tensor<T>,
    std: Tensor<T>,
}

impl<T: Element> Perceptual<T> {
    pub fn build(cfg: &PerceptualConfig) -> Result<Self> {
        cfg.validate()?;
        instrument::perceptual_built();
        let specs = cfg.arch.layers();
        let values: Vec<(Vec<f64>, Vec<f64>)> = match cfg.kind {
            PerceptualKind::FixedRandom => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                specs
                    .iter()
                    .map(|(_, ci, co, _)| (he_normal(&mut rng, ci * 9, co * ci * 9), vec![0.0; *co]))
                    .collect()
            }
            PerceptualKind::Pretrained => load_weights(Path::new(&cfg.weights_path), &specs)?,
        };
        let layers = specs
            .into_iter()
            .zip(values)
            .map(|((name, ci, co, pool), (w, b))| {
                Ok(Layer {
                    name,
                    weight: Tensor::new(w.into_iter().map(T::of).collect(), &[co, ci, 3, 3])?,
                    bias: Tensor::new(b.into_iter().map(T::of).collect(), &[co])?,
                    pool,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let per_channel = |v: [f64; 3]| Tensor::new(v.iter().map(|&x| T::of(x)).collect(), &[1, 3, 1, 1]);
        Ok(Self {
            cfg: cfg.clone(),
            layers,
            mean: per_channel(IMAGENET_MEAN)?,
            std: per_channel(IMAGENET_STD)?,
        })
    }

    pub fn config(&self) -> &PerceptualConfig {
        &self.cfg
    }

    /// `[b, 3, h, w]` with `h, w` divisible by 8 to `[b, 512, h/8, w/8]`.
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 || !s[2].is_multiple_of(PERCEPTUAL_STRIDE) || !s[3].is_multiple_of(PERCEPTUAL_STRIDE) || s[2] == 0 || s[3] == 0 {
            return Err(Error::Config(format!(
                "perceptual features need [b, 3, h, w] with h, w divisible by {PERCEPTUAL_STRIDE}, got {s:?}"
            )));
        }
        let mut h = x.sub(&self.mean)?.div(&self.std)?;
        for layer in &self.layers {
            h = h.conv2d(&layer.weight, Some(&layer.bias))?.relu();
            if layer.pool {
                h = h.max_pool2d()?;
            }
        }
        Ok(h)
    }

    /// Every weight and bias value, for freeze checks.
    pub fn weights_snapshot(&self) -> Vec<Vec<T>> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.to_vec(), l.bias.to_vec()])
            .collect()
    }

    /// The weight tensors themselves (constants).
    pub fn weight_tensors(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    /// FNV-1a hash over the bit patterns of all weights.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.weights_snapshot().iter().flatten() {
            for b in v.as_f64().to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Writes the weights in the loadable safetensors layout (f32).
    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for l in &self.layers {
            for (suffix, t) in [("weight", &l.weight), ("bias", &l.bias)] {
                let bytes = t.data().iter().flat_map(|v| (v.as_f64() as f32).to_le_bytes()).collect();
                buffers.push((format!("{}.{suffix}", l.name), t.shape().to_vec(), bytes));
            }
        }
        let views = buffers
            .iter()
            .map(|(n, s, b)| Ok((n.clone(), safetensors::tensor::TensorView::new(Dtype::F32, s.clone(), b).map_err(weights_err)?)))
            .collect::<Result<Vec<_>>>()?;
        let bytes = safetensors::serialize(views, None).map_err(weights_err)?;
        fs::write(path, bytes).map_err(io_err(path))
    }
}

fn weights_err(e: impl std::fmt::Display) -> Error {
    Error::Weights(e.to_string())
}

fn load_weights(path: &Path, specs: &[(String, usize, usize, bool)]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    if !path.is_file() {
        return Err(Error::Weights(format!("weights file {} not found", path.display())));
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Weights(format!("{}: {e}", path.display())))?;
    let read = |name: String, shape: Vec<usize>| -> Result<Vec<f64>> {
        let view = st
            .tensor(&name)
            .map_err(|_| Error::Weights(format!("{}: missing tensor {name}", path.display())))?;
        if view.shape() != shape.as_slice() {
            return Err(Error::Weights(format!(
                "{}: {name} has shape {:?}, expected {shape:?}",
                path.display(),
                view.shape()
            )));
        }
        let data = view.data();
        let values = match view.dtype() {
            Dtype::F32 => data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            Dtype::F64 => data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            other => return Err(Error::Weights(format!("{}: {name} has unsupported dtype {other:?}", path.display()))),
        };
        Ok(values)
    };
    specs
        .iter()
        .map(|(name, ci, co, _)| {
            Ok((
                read(format!("{name}.weight"), vec![*co, *ci, 3, 3])?,
                read(format!("{name}.bias"), vec![*co])?,
            ))
        })
        .collect()
}
