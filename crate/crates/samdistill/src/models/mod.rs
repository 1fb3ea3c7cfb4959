//! The cascaded restorers and the tensor plumbing around them.

mod baseline;
mod layers;
mod params;
mod refiner;

use autograd::{Element, Tensor};
use samdistill_core::{resize_mask, ImageTensor, MaskSet};

use crate::error::{Error, Result};

pub use baseline::{BaselineIR, BaselineIRConfig};
pub use layers::{act, Conv2d, Init, LEAKY_SLOPE};
pub use params::{he_normal, ParamId, ParamStore};
pub use refiner::{resize_nearest, Refiner, RefinerConfig, RefinerPass, SPFUnitConfig, SpfUnit};

/// Fixed-width mask encoding: `n_max` planes of `h x w`, the first `N`
/// holding the (nearest-resized) masks and the rest zero.
pub fn pack_masks(masks: &MaskSet, n_max: usize, h: usize, w: usize) -> Result<Vec<f64>> {
    if masks.n() > n_max {
        return Err(Error::Segment(format!(
            "{} masks exceed n_max = {n_max}; canonicalize first",
            masks.n()
        )));
    }
    let mut out = vec![0.0; n_max * h * w];
    for (k, m) in masks.channels().enumerate() {
        let r = resize_mask(m, (masks.height(), masks.width()), (h, w))?;
        for (dst, &v) in out[k * h * w..(k + 1) * h * w].iter_mut().zip(&r) {
            *dst = v as f64;
        }
    }
    Ok(out)
}

/// `[batch, n_max, h, w]` constant tensor of packed masks.
pub fn pack_mask_batch<T: Element>(masks: &[MaskSet], n_max: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(masks.len() * n_max * h * w);
    for m in masks {
        data.extend(pack_masks(m, n_max, h, w)?.into_iter().map(T::of));
    }
    Ok(Tensor::new(data, &[masks.len(), n_max, h, w])?)
}

/// Stacks same-shape images into a constant `[batch, c, h, w]` tensor.
pub fn images_to_tensor<T: Element>(images: &[&ImageTensor]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Dataset("cannot batch zero images".into()))?;
    let mut data = Vec::with_capacity(images.len() * first.len());
    for img in images {
        first.ensure_same_shape(img)?;
        data.extend(img.as_slice().iter().map(|&v| T::of(v)));
    }
    let [c, h, w] = first.shape();
    Ok(Tensor::new(data, &[images.len(), c, h, w])?)
}

/// Splits a `[batch, c, h, w]` tensor back into images (values unclamped).
pub fn tensor_to_images<T: Element>(t: &Tensor<T>) -> Result<Vec<ImageTensor>> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(Error::Dataset(format!("expected a [b, c, h, w] tensor, got {s:?}")));
    }
    let per = s[1] * s[2] * s[3];
    t.data()
        .chunks(per)
        .map(|c| Ok(ImageTensor::new(c.iter().map(|v| v.as_f64()).collect(), s[1], s[2], s[3])?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::{canonicalize, GridSegmenter, LuminanceSegmenter, Segmenter};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn input(seed: u64, h: usize, w: usize) -> Tensor<f64> {
        let img = crate::data::procedural_image(seed, 3, h, w).unwrap();
        images_to_tensor(&[&img]).unwrap()
    }

    fn masks_for(x: &Tensor<f64>, n_max: usize) -> Tensor<f64> {
        let img = &tensor_to_images(x).unwrap()[0];
        let m = canonicalize(&LuminanceSegmenter::new(4).segment("x", img).unwrap(), n_max).unwrap();
        pack_mask_batch(&[m], n_max, img.height(), img.width()).unwrap()
    }

    fn randomize(store: &mut ParamStore<f64>, name_suffix: &str, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = store.names().iter().position(|n| n.ends_with(name_suffix)).unwrap();
        let n = store.tensors()[idx].numel();
        store.set(idx, (0..n).map(|_| rng.random_range(-0.2..0.2)).collect()).unwrap();
    }

    #[test]
    fn baseline_identity_at_init_and_shape() {
        for cfg in [
            BaselineIRConfig::default(),
            BaselineIRConfig {
                channels: 8,
                n_blocks: 2,
                in_channels: 3,
            },
        ] {
            let m = BaselineIR::<f64>::new(&cfg, 1).unwrap();
            let x = input(2, 64, 64);
            let y = m.forward(&x).unwrap();
            assert_eq!(y.shape(), &[1, 3, 64, 64]);
            assert_eq!(y.data(), x.data());
        }
    }

    #[test]
    fn baseline_config_bounds() {
        let bad = BaselineIRConfig {
            channels: 4,
            ..Default::default()
        };
        assert!(BaselineIR::<f64>::new(&bad, 0).is_err());
        let bad = BaselineIRConfig {
            n_blocks: 1,
            ..Default::default()
        };
        assert!(BaselineIR::<f32>::new(&bad, 0).is_err());
    }

    #[test]
    fn pack_identity_and_padding() {
        let img = ImageTensor::filled(3, 16, 16, 0.5).unwrap();
        let grid = GridSegmenter::new(2, 4).segment("x", &img).unwrap();
        let packed = pack_masks(&grid, 8, 16, 16).unwrap();
        let native: Vec<f64> = grid.as_slice().iter().map(|&v| v as f64).collect();
        assert_eq!(packed, native);

        let two = GridSegmenter::new(1, 2).segment("x", &img).unwrap();
        let packed = pack_masks(&two, 8, 16, 16).unwrap();
        assert!(packed[2 * 256..].iter().all(|&v| v == 0.0));
        assert!(pack_masks(&grid, 4, 16, 16).is_err());
    }

    #[test]
    fn pack_matches_resize_mask() {
        let img = crate::data::procedural_image(4, 3, 32, 32).unwrap();
        let m = LuminanceSegmenter::new(5).segment("x", &img).unwrap();
        let packed = pack_masks(&m, 8, 8, 16).unwrap();
        for (k, ch) in m.channels().enumerate() {
            let r = resize_mask(ch, (32, 32), (8, 16)).unwrap();
            let got: Vec<u8> = packed[k * 128..(k + 1) * 128].iter().map(|&v| v as u8).collect();
            assert_eq!(got, r);
        }
    }

    #[test]
    fn refiner_identity_at_init_and_unit_count() {
        for n_blocks in [2, 4] {
            let cfg = RefinerConfig {
                n_blocks,
                ..Default::default()
            };
            let r = Refiner::<f64>::new(&cfg, 3).unwrap();
            assert_eq!(r.units().len(), n_blocks);
            let x = input(5, 32, 32);
            let y = r.forward(&x, &masks_for(&x, 8)).unwrap();
            assert_eq!(y.data(), x.data());
            assert_eq!(r.unit_activations(), vec![1; n_blocks]);
        }
    }

    #[test]
    fn every_unit_matters() {
        let mut r = Refiner::<f64>::new(&RefinerConfig::default(), 7).unwrap();
        randomize(r.params_mut(), "tail.weight", 1);
        let x = input(6, 32, 32);
        let m = masks_for(&x, 8);
        let full = r.forward(&x, &m).unwrap();
        for i in 0..r.units().len() {
            let bypassed = r.forward_with(&x, &m, RefinerPass { bypass: Some(i) }).unwrap();
            assert_ne!(bypassed.data(), full.data(), "unit {i} is dead");
        }
    }

    #[test]
    fn spf_resizes_to_block_and_saturates() {
        let mut store = ParamStore::<f64>::new("t");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = SPFUnitConfig {
            hidden_channels: 8,
            attention: true,
        };
        let unit = SpfUnit::new(&mut store, &mut rng, "u", &cfg, 4, 8, 2).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut t = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new((0..n).map(|_| r.random_range(0.0..1.0)).collect(), shape).unwrap()
        };
        let (f_in, f_block) = (t(&[1, 4, 64, 64]), t(&[1, 8, 32, 32]));
        let masks = Tensor::new(vec![1.0; 2 * 64 * 64], &[1, 2, 64, 64]).unwrap();
        let gated = unit.forward(&store, &f_in, &f_block, &masks).unwrap();
        assert_eq!(gated.shape(), &[1, 8, 32, 32]);

        let gate = unit.gate().unwrap();
        let zero_w = vec![0.0; store.get(gate.weight).numel()];
        store.set(gate.weight.index(), zero_w).unwrap();
        store.set(gate.bias.index(), vec![50.0; 8]).unwrap();
        let saturated = unit.forward(&store, &f_in, &f_block, &masks).unwrap();

        let mut plain_store = ParamStore::<f64>::new("t");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plain = SpfUnit::new(
            &mut plain_store,
            &mut rng,
            "u",
            &SPFUnitConfig {
                attention: false,
                ..cfg
            },
            4,
            8,
            2,
        )
        .unwrap();
        let ungated = plain.forward(&plain_store, &f_in, &f_block, &masks).unwrap();
        for (a, b) in saturated.data().iter().zip(ungated.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(unit.forward(&store, &f_block, &f_block, &masks).is_err());
    }

    #[test]
    fn refiner_output_depends_on_masks() {
        let mut r = Refiner::<f64>::new(&RefinerConfig::default(), 9).unwrap();
        randomize(r.params_mut(), "tail.weight", 2);
        let x = input(7, 16, 16);
        let m = masks_for(&x, 8);
        let base = r.forward(&x, &m).unwrap();
        let mut md = m.to_vec();
        let eps = 1e-4;
        md[8 * 256 - 1 - 3 * 16] += eps;
        md[3 * 16 + 2] += eps;
        let moved = r.forward(&x, &Tensor::new(md, m.shape()).unwrap()).unwrap();
        let max_fd = base
            .data()
            .iter()
            .zip(moved.data())
            .map(|(a, b)| ((b - a) / eps).abs())
            .fold(0.0, f64::max);
        assert!(max_fd > 1e-6, "{max_fd}");
    }

    #[test]
    fn frozen_models_record_nothing() {
        let b = BaselineIR::<f64>::new(&BaselineIRConfig::default(), 0).unwrap().frozen();
        let y = b.forward(&input(1, 16, 16)).unwrap();
        assert!(!y.requires_grad());
        assert!(b.params().tensors().iter().all(|t| !t.requires_grad()));
    }

    #[test]
    fn parameters_are_disjoint() {
        let b = BaselineIR::<f64>::new(&BaselineIRConfig::default(), 0).unwrap();
        let r = Refiner::<f64>::new(&RefinerConfig::default(), 0).unwrap();
        let ids: std::collections::HashSet<usize> = b.params().tensors().iter().map(Tensor::id).collect();
        assert!(r.params().tensors().iter().all(|t| !ids.contains(&t.id())));
        assert!(b.params().names().iter().all(|n| !r.params().names().contains(n)));
    }

    #[test]
    fn image_tensor_round_trip() {
        let a = crate::data::procedural_image(1, 3, 16, 8).unwrap();
        let b = crate::data::procedural_image(2, 3, 16, 8).unwrap();
        let t: Tensor<f64> = images_to_tensor(&[&a, &b]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 16, 8]);
        assert_eq!(tensor_to_images(&t).unwrap(), vec![a, b]);
    }
}
