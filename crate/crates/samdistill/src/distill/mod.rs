//! Distillation losses from the refiner's output back into the baseline.

mod losses;
mod perceptual;
mod relation;

use autograd::{Element, Tensor};
use samdistill_core::MaskSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use losses::{l1, sgr_loss, smooth_l1};
pub use perceptual::{Perceptual, PerceptualArch, PerceptualConfig, PerceptualKind, PERCEPTUAL_CHANNELS, PERCEPTUAL_STRIDE};
pub use relation::{mask_guided_features, relation_matrix, row_norms, RelationMatrix, RELATION_EPS};

/// How a masked feature map becomes the vector compared in a relation matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationVectors {
    /// All `c * h * w` values. Masks with disjoint supports are orthogonal.
    #[default]
    Flatten,
    /// Per-channel sum over the mask support, a `c`-vector.
    ChannelSum,
}

/// Image-level and relation-level distillation terms for a batch.
#[derive(Debug)]
pub struct SpdSgr<T: Element> {
    pub l_spd: Tensor<T>,
    /// Mean over samples whose relation matrix was computable; zero when none.
    pub l_sgr: Tensor<T>,
    /// Samples whose relation term was skipped for lack of two usable masks.
    pub sgr_skips: usize,
}

/// One row per kept mask of one sample's masked feature map.
fn masked_rows<T: Element>(
    features: &Tensor<T>,
    masks_low: &Tensor<T>,
    keep: &[usize],
    vectors: RelationVectors,
) -> Result<Tensor<T>> {
    let m = masks_low.select(keep)?;
    let masked = mask_guided_features(features, &m)?;
    let (n, c) = (keep.len(), masked.dim(1));
    match vectors {
        RelationVectors::Flatten => Ok(masked.reshape(&[n, masked.numel() / n])?),
        RelationVectors::ChannelSum => {
            let plane = masked.numel() / (n * c);
            Ok(masked.reshape(&[n * c, plane])?.sum_axis(1)?.reshape(&[n, c])?)
        }
    }
}

/// `l_spd = smooth_l1(student, stop_grad(teacher))` and the relation loss
/// between perceptual features of both images under each sample's masks
/// (nearest-resized to the feature resolution). Masks that are empty at
/// that resolution, or whose masked feature vanishes on either side, are
/// left out; samples with fewer than two remaining masks contribute no
/// relation term.
pub fn spd_sgr_losses<T: Element>(
    student: &Tensor<T>,
    teacher: &Tensor<T>,
    masks: &[MaskSet],
    perceptual: &Perceptual<T>,
    vectors: RelationVectors,
) -> Result<SpdSgr<T>> {
    let teacher = teacher.detach();
    let f_teacher = perceptual.features(&teacher)?;
    spd_sgr_losses_with(student, &teacher, &f_teacher, masks, perceptual, vectors)
}

/// [`spd_sgr_losses`] with the teacher's perceptual features already
/// computed.
pub fn spd_sgr_losses_with<T: Element>(
    student: &Tensor<T>,
    teacher: &Tensor<T>,
    f_teacher: &Tensor<T>,
    masks: &[MaskSet],
    perceptual: &Perceptual<T>,
    vectors: RelationVectors,
) -> Result<SpdSgr<T>> {
    let teacher = teacher.detach();
    let f_teacher = f_teacher.detach();
    let l_spd = smooth_l1(student, &teacher)?;
    let batch = student.dim(0);
    if masks.len() != batch {
        return Err(Error::Segment(format!("{} mask sets for a batch of {batch}", masks.len())));
    }
    let f_student = perceptual.features(student)?;
    if f_teacher.shape() != f_student.shape() {
        return Err(Error::Segment(format!(
            "teacher features {:?} do not match student features {:?}",
            f_teacher.shape(),
            f_student.shape()
        )));
    }
    let (h, w) = (f_student.dim(2), f_student.dim(3));

    let mut terms = Vec::with_capacity(batch);
    let mut sgr_skips = 0;
    for (b, m) in masks.iter().enumerate() {
        let low = m.resized(h, w)?;
        let nonempty: Vec<usize> = (0..low.n()).filter(|&k| low.areas()[k] > 0).collect();
        if nonempty.len() < 2 {
            sgr_skips += 1;
            continue;
        }
        let low_t = Tensor::new(
            low.as_slice().iter().map(|&v| T::of(v as f64)).collect(),
            &[low.n(), h, w],
        )?;
        let fs = f_student.select(&[b])?;
        let ft = f_teacher.select(&[b])?;
        let xs = masked_rows(&fs, &low_t, &nonempty, vectors)?;
        let xt = masked_rows(&ft, &low_t, &nonempty, vectors)?;
        let (ns, nt) = (row_norms(&xs), row_norms(&xt));
        let keep: Vec<usize> = (0..nonempty.len())
            .filter(|&i| ns[i] > RELATION_EPS && nt[i] > RELATION_EPS)
            .collect();
        if keep.len() < 2 {
            sgr_skips += 1;
            continue;
        }
        let (xs, xt) = if keep.len() == nonempty.len() {
            (xs, xt)
        } else {
            (xs.select(&keep)?, xt.select(&keep)?)
        };
        terms.push(sgr_loss(&relation_matrix(&xs)?, &relation_matrix(&xt)?)?);
    }

    let l_sgr = match terms.len() {
        0 => Tensor::scalar(T::zero()),
        n => {
            let mut total = terms[0].clone();
            for t in &terms[1..] {
                total = total.add(t)?;
            }
            total.scale(T::of(1.0 / n as f64))
        }
    };
    Ok(SpdSgr { l_spd, l_sgr, sgr_skips })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::images_to_tensor;
    use crate::segmenter::{GridSegmenter, Segmenter};
    use samdistill_core::{finite_diff_grad, GradCheckReport, ImageTensor};

    fn extractor() -> Perceptual<f64> {
        Perceptual::build(&PerceptualConfig::default()).unwrap()
    }

    fn image(seed: u64, n: usize) -> ImageTensor {
        crate::data::procedural_image(seed, 3, n, n).unwrap()
    }

    #[test]
    fn output_shape_is_512_by_eighth() {
        for arch in [PerceptualArch::Compact, PerceptualArch::Vgg16] {
            let p = Perceptual::<f64>::build(&PerceptualConfig::fixed_random(arch, 1)).unwrap();
            let f = p.features(&images_to_tensor(&[&image(0, 64)]).unwrap()).unwrap();
            assert_eq!(f.shape(), &[1, 512, 8, 8]);
        }
    }

    #[test]
    fn fixed_random_is_deterministic() {
        let x: Tensor<f64> = images_to_tensor(&[&image(1, 32)]).unwrap();
        let a = extractor().features(&x).unwrap();
        let b = extractor().features(&x).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(extractor().fingerprint(), extractor().fingerprint());
    }

    #[test]
    fn extractor_is_frozen() {
        let p = extractor();
        let before = p.weights_snapshot();
        let x = images_to_tensor::<f64>(&[&image(2, 16)]).unwrap().requires_grad_leaf();
        let g = p.features(&x).unwrap().square().sum_all().backward().unwrap();
        assert!(g.get(&x).is_some());
        for w in p.weight_tensors() {
            assert!(g.get(w).is_none());
            assert!(!w.requires_grad());
        }
        assert_eq!(p.weights_snapshot(), before);
    }

    #[test]
    fn pretrained_needs_a_file() {
        let cfg = PerceptualConfig::pretrained(PerceptualArch::Compact, "/nonexistent/weights.safetensors");
        assert!(matches!(Perceptual::<f64>::build(&cfg), Err(Error::Weights(_))));
        let cfg = PerceptualConfig {
            out_channels: 256,
            ..Default::default()
        };
        assert!(Perceptual::<f64>::build(&cfg).is_err());
    }

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        let p = extractor();
        p.save_weights(&path).unwrap();
        let cfg = PerceptualConfig::pretrained(PerceptualArch::Compact, path.to_str().unwrap());
        let q = Perceptual::<f32>::build(&cfg).unwrap();
        let x32: Tensor<f32> = images_to_tensor(&[&image(3, 16)]).unwrap();
        let p32 = Perceptual::<f32>::build(&PerceptualConfig::default()).unwrap();
        assert_eq!(q.features(&x32).unwrap().data(), p32.features(&x32).unwrap().data());
        let wrong = PerceptualConfig::pretrained(PerceptualArch::Vgg16, path.to_str().unwrap());
        assert!(matches!(Perceptual::<f64>::build(&wrong), Err(Error::Weights(_))));
    }

    #[test]
    fn equal_images_give_zero_losses() {
        let img = image(4, 32);
        let x: Tensor<f64> = images_to_tensor(&[&img]).unwrap();
        let masks = vec![GridSegmenter::new(2, 2).segment("x", &img).unwrap()];
        let out = spd_sgr_losses(&x, &x, &masks, &extractor(), RelationVectors::Flatten).unwrap();
        assert_eq!(out.l_spd.item().unwrap(), 0.0);
        assert_eq!(out.l_sgr.item().unwrap(), 0.0);
        assert_eq!(out.sgr_skips, 0);
    }

    /// Three overlapping masks: left half, top half, a centered square.
    fn overlapping(n: usize) -> MaskSet {
        let plane = |f: &dyn Fn(usize, usize) -> bool| -> Vec<u8> {
            (0..n * n).map(|p| f(p / n, p % n) as u8).collect()
        };
        MaskSet::from_channels(
            &[
                plane(&|_, x| x < n / 2),
                plane(&|y, _| y < n / 2),
                plane(&|y, x| (n / 4..3 * n / 4).contains(&y) && (n / 4..3 * n / 4).contains(&x)),
            ],
            n,
            n,
        )
        .unwrap()
    }

    #[test]
    fn disjoint_masks_give_zero_relation_loss_when_flattened() {
        let (a, b) = (image(5, 32), image(6, 32));
        let s = images_to_tensor::<f64>(&[&a]).unwrap();
        let t = images_to_tensor::<f64>(&[&b]).unwrap();
        let masks = vec![GridSegmenter::new(2, 2).segment("x", &a).unwrap()];
        let flat = spd_sgr_losses(&s, &t, &masks, &extractor(), RelationVectors::Flatten).unwrap();
        assert_eq!(flat.l_sgr.item().unwrap(), 0.0);
        let pooled = spd_sgr_losses(&s, &t, &masks, &extractor(), RelationVectors::ChannelSum).unwrap();
        assert!(pooled.l_sgr.item().unwrap() > 0.0);
    }

    #[test]
    fn teacher_gets_no_gradient_and_single_mask_skips() {
        let (a, b) = (image(5, 32), image(6, 32));
        let s = images_to_tensor::<f64>(&[&a]).unwrap().requires_grad_leaf();
        let t = images_to_tensor::<f64>(&[&b]).unwrap().requires_grad_leaf();
        let masks = vec![overlapping(32)];
        let out = spd_sgr_losses(&s, &t, &masks, &extractor(), RelationVectors::Flatten).unwrap();
        assert!(out.l_sgr.item().unwrap() > 0.0);
        let g = out.l_spd.add(&out.l_sgr).unwrap().backward().unwrap();
        assert!(g.get(&t).is_none());
        assert!(g.get(&s).is_some());

        let single = vec![MaskSet::full(32, 32)];
        let out = spd_sgr_losses(&s, &t, &single, &extractor(), RelationVectors::Flatten).unwrap();
        assert_eq!(out.sgr_skips, 1);
        assert_eq!(out.l_sgr.item().unwrap(), 0.0);
    }

    #[test]
    fn sgr_gradient_matches_finite_differences() {
        let (a, b) = (image(7, 16), image(8, 16));
        let teacher: Tensor<f64> = images_to_tensor(&[&b]).unwrap();
        let p = extractor();
        for (masks, vectors) in [
            (vec![overlapping(16)], RelationVectors::Flatten),
            (vec![GridSegmenter::new(2, 2).segment("x", &a).unwrap()], RelationVectors::ChannelSum),
        ] {
            let loss = |v: &[f64]| {
                let s = Tensor::new(v.to_vec(), &[1, 3, 16, 16]).unwrap();
                spd_sgr_losses(&s, &teacher, &masks, &p, vectors).unwrap().l_sgr.item().unwrap()
            };
            let s = images_to_tensor::<f64>(&[&a]).unwrap().requires_grad_leaf();
            let out = spd_sgr_losses(&s, &teacher, &masks, &p, vectors).unwrap();
            assert!(out.l_sgr.item().unwrap() > 0.0, "{vectors:?}");
            let g = out.l_sgr.backward().unwrap();
            let numeric = finite_diff_grad(loss, s.data(), 1e-6).unwrap();
            let report = GradCheckReport::compare("student", g.get(&s).unwrap(), &numeric, 1e-3);
            assert!(report.passed, "{vectors:?} {report:?}");
        }
    }
}
