//! Acceptance checks shared by the `verify` command and the test suite.
//!
//! Every check returns a [`CheckOutcome`] with the measured quantities in
//! `detail`; none of them needs network access or external weights.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use autograd::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use samdistill_core::reference::{psnr_loop, relation_matrix_loop, sgr_loss_loop, smooth_l1_loop, ssim_windowed};
use samdistill_core::{finite_diff_grads, psnr, ssim, GradCheckReport, ImageTensor, MaskSet};
use serde::{Deserialize, Serialize};

use crate::data::{sub_seed, PairedSample};
use crate::distill::{
    mask_guided_features, relation_matrix, sgr_loss, smooth_l1, spd_sgr_losses, spd_sgr_losses_with, Perceptual,
    PerceptualConfig,
    RelationVectors,
};
use crate::error::{Error, Result};
use crate::experiment::ExperimentReport;
use crate::instrument::Counters;
use crate::models::{BaselineIR, BaselineIRConfig, ParamStore, Refiner, RefinerConfig, SPFUnitConfig};
use crate::segmenter::{build_segmenter, canonicalize};
use crate::train::{evaluate, Checkpoint, Precision, TrainConfig, Trainer, Which};

/// Wall-clock budget of the distillation experiment.
pub const EXPERIMENT_BUDGET_SECS: f64 = 45.0 * 60.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub secs: f64,
}

impl CheckOutcome {
    fn new(id: u8, name: &str, passed: bool, detail: String, start: Instant) -> Self {
        Self {
            id,
            name: name.to_string(),
            passed,
            detail,
            secs: start.elapsed().as_secs_f64(),
        }
    }

    fn errored(id: u8, name: &str, err: &Error, start: Instant) -> Self {
        Self::new(id, name, false, format!("error: {err}"), start)
    }

    /// One table row, e.g. `[PASS]  1 loss oracles  (0.3 s)  max |err| 2e-16`.
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<30} ({:>6.1} s)  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.secs,
            self.detail
        )
    }
}

fn guard(id: u8, name: &str, f: impl FnOnce(Instant) -> Result<CheckOutcome>) -> CheckOutcome {
    let start = Instant::now();
    f(start).unwrap_or_else(|e| CheckOutcome::errored(id, name, &e, start))
}

fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Small in-memory training setup for the 64-bit checks.
pub fn small_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.seed = seed;
    cfg.precision = Precision::F64;
    cfg.batch_size = 4;
    cfg.baseline.channels = 8;
    cfg.refiner.channels = 8;
    cfg.refiner.spf.hidden_channels = 8;
    cfg.data.train_count = 12;
    cfg.data.val_count = 4;
    cfg.data.height = 32;
    cfg.data.width = 32;
    cfg
}

/// Criterion 1: the differentiable losses against scalar loops.
pub fn loss_oracles(trials: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "loss oracles";
    guard(1, NAME, |start| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut e_sl1, mut e_rel, mut e_sgr) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..trials {
            let n = rng.random_range(1..=64);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let got = smooth_l1(&Tensor::new(a.clone(), &[n])?, &Tensor::new(b.clone(), &[n])?)?.item()?;
            e_sl1 = e_sl1.max((got - smooth_l1_loop(&a, &b)).abs());

            let (rows, d) = (rng.random_range(2..=8), rng.random_range(1..=40));
            let vectors: Vec<Vec<f64>> = (0..rows).map(|_| normal_vec(&mut rng, d)).collect();
            let flat: Vec<f64> = vectors.concat();
            let r = relation_matrix(&Tensor::new(flat, &[rows, d])?)?;
            let oracle = relation_matrix_loop(&vectors);
            e_rel = e_rel.max(max_abs_diff(r.data(), &oracle.concat()));

            let m = rng.random_range(2..=8);
            let sym = |rng: &mut ChaCha8Rng| {
                let mut r = vec![vec![1.0f64; m]; m];
                for i in 0..m {
                    for j in i + 1..m {
                        let v = rng.random_range(-1.0..1.0);
                        r[i][j] = v;
                        r[j][i] = v;
                    }
                }
                r
            };
            let (r1, r2) = (sym(&mut rng), sym(&mut rng));
            let got = sgr_loss(&Tensor::new(r1.concat(), &[m, m])?, &Tensor::new(r2.concat(), &[m, m])?)?.item()?;
            e_sgr = e_sgr.max((got - sgr_loss_loop(&r1, &r2)).abs());
        }
        let worst = e_sl1.max(e_rel).max(e_sgr);
        let secs = start.elapsed().as_secs_f64();
        Ok(CheckOutcome::new(
            1,
            NAME,
            worst < 1e-6 && secs < 60.0,
            format!("{trials} trials each; max |err| smooth_l1 {e_sl1:.1e}, relation {e_rel:.1e}, sgr {e_sgr:.1e} (tol 1e-6)"),
            start,
        ))
    })
}

/// Up to `count` distinct masks, each a nonempty union of the four
/// quadrants, so supports overlap and survive the stride-8 resize.
fn quadrant_masks(rng: &mut impl Rng, count: usize, h: usize, w: usize) -> Result<MaskSet> {
    let mut subsets: Vec<u8> = (1..16).collect();
    subsets.shuffle(rng);
    let channels: Vec<Vec<u8>> = subsets[..count]
        .iter()
        .map(|&bits| {
            (0..h * w)
                .map(|p| {
                    let q = 2 * usize::from(p / w >= h / 2) + usize::from(p % w >= w / 2);
                    (bits >> q) & 1
                })
                .collect()
        })
        .collect();
    Ok(MaskSet::from_channels(&channels, h, w)?)
}

/// Central-difference step of the gradient checks. Smaller steps let
/// rounding dominate on gradient entries near 1e-8.
const FD_STEP: f64 = 1e-5;

/// Criterion 2: gradients of both distillation losses against central
/// finite differences on random 3x16x16 instances.
pub fn gradient_checks(instances: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "gradient checks";
    guard(2, NAME, |start| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perceptual = Perceptual::<f64>::build(&PerceptualConfig::default())?;
        let (mut worst_spd, mut worst_sgr, mut min_sgr) = (0.0f64, 0.0f64, f64::INFINITY);
        let shape = [1, 3, 16, 16];
        for _ in 0..instances {
            let student: Vec<f64> = (0..768).map(|_| rng.random_range(0.0..1.0)).collect();
            let teacher = Tensor::new((0..768).map(|_| rng.random_range(0.0..1.0)).collect(), &shape)?;
            let n = rng.random_range(3..=5);
            let masks = vec![quadrant_masks(&mut rng, n, 16, 16)?];
            let f_teacher = perceptual.features(&teacher)?;
            let losses = |v: &[f64]| -> Vec<f64> {
                let eval = || -> Result<Vec<f64>> {
                    let student = Tensor::new(v.to_vec(), &shape)?;
                    let out = spd_sgr_losses_with(&student, &teacher, &f_teacher, &masks, &perceptual, RelationVectors::Flatten)?;
                    Ok(vec![out.l_spd.item()?, out.l_sgr.item()?])
                };
                eval().unwrap_or_else(|_| vec![f64::NAN; 2])
            };
            let s = Tensor::new(student.clone(), &shape)?.requires_grad_leaf();
            let out = spd_sgr_losses(&s, &teacher, &masks, &perceptual, RelationVectors::Flatten)?;
            min_sgr = min_sgr.min(out.l_sgr.item()?);
            let g_spd = out.l_spd.backward()?.get_or_zeros(&s);
            let g_sgr = out.l_sgr.backward()?.get_or_zeros(&s);
            let fd = finite_diff_grads(losses, &student, FD_STEP)?;
            let (fd_spd, fd_sgr) = (&fd[0], &fd[1]);
            worst_spd = worst_spd.max(GradCheckReport::compare("l_spd", &g_spd, fd_spd, 1e-3).max_rel_error);
            worst_sgr = worst_sgr.max(GradCheckReport::compare("l_sgr", &g_sgr, fd_sgr, 1e-3).max_rel_error);
        }
        let secs = start.elapsed().as_secs_f64();
        Ok(CheckOutcome::new(
            2,
            NAME,
            worst_spd < 1e-3 && worst_sgr < 1e-3 && min_sgr > 0.0 && secs < 120.0,
            format!(
                "{instances} instances; max rel err l_spd {worst_spd:.1e}, l_sgr {worst_sgr:.1e} (tol 1e-3); min l_sgr {min_sgr:.2e}"
            ),
            start,
        ))
    })
}

/// Criterion 3: value and slope of smooth L1 agree across the branch point.
pub fn smooth_l1_continuity() -> CheckOutcome {
    const NAME: &str = "smooth-L1 continuity";
    guard(3, NAME, |start| {
        let h = 2f64.powi(-40);
        let eval = |d: f64| -> Result<(f64, f64)> {
            let x = Tensor::new(vec![d], &[1])?.requires_grad_leaf();
            let y = x.smooth_l1().sum_all();
            Ok((y.item()?, y.backward()?.get_or_zeros(&x)[0]))
        };
        let (mut value_gap, mut slope_gap) = (0.0f64, 0.0f64);
        for sign in [1.0, -1.0] {
            let (q_val, q_slope) = eval(sign)?;
            let (l_val, l_slope) = eval(sign * (1.0 + h))?;
            let (_, inner_slope) = eval(sign * (1.0 - h))?;
            // The linear branch is |d| - 0.5, so stepping back by h is exact.
            value_gap = value_gap.max((q_val - (l_val - h)).abs());
            slope_gap = slope_gap.max((q_slope - l_slope).abs()).max((q_slope - inner_slope).abs());
        }
        Ok(CheckOutcome::new(
            3,
            NAME,
            value_gap < 1e-12 && slope_gap < 1e-9,
            format!("value gap {value_gap:.1e} (tol 1e-12), derivative gap {slope_gap:.1e} (tol 1e-9)"),
            start,
        ))
    })
}

fn probe_masks(cfg: &TrainConfig, samples: &[PairedSample]) -> Result<Vec<MaskSet>> {
    let seg = build_segmenter(&cfg.segmenter)?;
    samples
        .iter()
        .map(|s| canonicalize(&seg.segment(&s.id, &s.hq)?, cfg.segmenter.n_max))
        .collect()
}

/// Criterion 4: distillation terms never reach the refiner, and the
/// frozen components do not change during training.
pub fn stop_gradient_contract(steps: usize) -> CheckOutcome {
    const NAME: &str = "stop-gradient contract";
    guard(4, NAME, |start| {
        let cfg = small_config(4);
        let (train, _) = cfg.data.synthesize()?;
        let mut trainer = Trainer::<f64>::new(&cfg, train.clone())?;
        trainer.set_audit(true);
        let weights0 = trainer.perceptual().weights_snapshot();
        let fresh = Perceptual::<f64>::build(&cfg.perceptual)?;
        let masks0 = probe_masks(&cfg, &train)?;

        let (mut worst_refiner, mut worst_baseline, mut reached) = (0.0f64, 0.0f64, 0usize);
        for _ in 0..steps {
            let (_, audit) = trainer.step()?;
            let a = audit.ok_or_else(|| Error::Config("audit missing".into()))?;
            worst_refiner = worst_refiner.max(a.refiner_distill_grad_max);
            worst_baseline = worst_baseline.max(a.baseline_recon2_grad_max);
            reached += a.refiner_params_reached;
        }
        let frozen_same = trainer.perceptual().weights_snapshot() == weights0
            && trainer.perceptual().fingerprint() == fresh.fingerprint()
            && trainer.perceptual().weight_tensors().iter().all(|t| !t.requires_grad());
        let masks_same = probe_masks(&cfg, &train)? == masks0;
        Ok(CheckOutcome::new(
            4,
            NAME,
            worst_refiner == 0.0 && worst_baseline == 0.0 && frozen_same && masks_same,
            format!(
                "{steps} steps; max |d(distill)/d(refiner)| {worst_refiner:e} over {reached} reached tensors, \
                 max |d(recon2)/d(baseline)| {worst_baseline:e}; perceptual identical {frozen_same}, segmenter identical {masks_same}"
            ),
            start,
        ))
    })
}

/// Random binary masks over `h x w`, each with at least one pixel set.
fn random_masks(rng: &mut impl Rng, n: usize, h: usize, w: usize) -> Vec<Vec<u8>> {
    (0..n)
        .map(|_| {
            let mut m: Vec<u8> = (0..h * w).map(|_| u8::from(rng.random_bool(0.4))).collect();
            m[rng.random_range(0..h * w)] = 1;
            m
        })
        .collect()
}

/// `n` masks forming an exact partition of `h x w`, none empty.
fn partition_masks(rng: &mut impl Rng, n: usize, h: usize, w: usize) -> Vec<Vec<u8>> {
    let mut labels: Vec<usize> = (0..h * w).map(|p| if p < n { p } else { rng.random_range(0..n) }).collect();
    labels.shuffle(rng);
    (0..n)
        .map(|k| labels.iter().map(|&l| u8::from(l == k)).collect())
        .collect()
}

fn masked_matrix(feature: &Tensor<f64>, masks: &[Vec<u8>], h: usize, w: usize) -> Result<Tensor<f64>> {
    let flat: Vec<f64> = masks.iter().flatten().map(|&v| f64::from(v)).collect();
    let m = Tensor::new(flat, &[masks.len(), h, w])?;
    let x = mask_guided_features(feature, &m)?;
    Ok(x.reshape(&[masks.len(), x.numel() / masks.len()])?)
}

/// Criterion 5: symmetry, range, self-similarity, orthogonality of
/// disjoint supports and permutation invariance of the SGR loss.
pub fn relation_properties(trials: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "relation-matrix properties";
    guard(5, NAME, |start| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut asym, mut range_excess, mut self_err, mut disjoint_max, mut perm_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for _ in 0..trials {
            let (c, h, w) = (rng.random_range(1..=6), rng.random_range(2..=6), rng.random_range(2..=6));
            let n = rng.random_range(2..=6).min(h * w);
            let feature = Tensor::new(normal_vec(&mut rng, c * h * w), &[c, h, w])?;

            let mut masks = random_masks(&mut rng, n, h, w);
            masks.push(masks[0].clone());
            let r = relation_matrix(&masked_matrix(&feature, &masks, h, w)?)?;
            let r = r.data();
            let m = masks.len();
            for i in 0..m {
                self_err = self_err.max((r[i * m + i] - 1.0).abs());
                for j in 0..m {
                    asym = asym.max((r[i * m + j] - r[j * m + i]).abs());
                    range_excess = range_excess.max(r[i * m + j].abs() - 1.0);
                }
            }
            self_err = self_err.max((r[m - 1] - 1.0).abs());

            let parts = partition_masks(&mut rng, n, h, w);
            let r = relation_matrix(&masked_matrix(&feature, &parts, h, w)?)?;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        disjoint_max = disjoint_max.max(r.data()[i * n + j].abs());
                    }
                }
            }

            let other = Tensor::new(normal_vec(&mut rng, c * h * w), &[c, h, w])?;
            let masks = random_masks(&mut rng, n, h, w);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let permuted: Vec<Vec<u8>> = perm.iter().map(|&k| masks[k].clone()).collect();
            let loss = |ms: &[Vec<u8>]| -> Result<f64> {
                let r1 = relation_matrix(&masked_matrix(&feature, ms, h, w)?)?;
                let r2 = relation_matrix(&masked_matrix(&other, ms, h, w)?)?;
                Ok(sgr_loss(&r1, &r2)?.item()?)
            };
            perm_err = perm_err.max((loss(&masks)? - loss(&permuted)?).abs());
        }
        Ok(CheckOutcome::new(
            5,
            NAME,
            asym <= 1e-6 && range_excess <= 1e-6 && self_err <= 1e-6 && disjoint_max == 0.0 && perm_err <= 1e-9,
            format!(
                "{trials} trials; asymmetry {asym:.1e}, range excess {range_excess:.1e}, self-similarity err {self_err:.1e}, \
                 disjoint max |R| {disjoint_max:e}, permutation err {perm_err:.1e}"
            ),
            start,
        ))
    })
}

fn randomize(store: &mut ParamStore<f64>, name_suffix: &str, rng: &mut impl Rng) -> Result<()> {
    for i in 0..store.len() {
        if store.names()[i].ends_with(name_suffix) {
            let n = store.tensors()[i].numel();
            store.set(i, normal_vec(rng, n).into_iter().map(|v| 0.1 * v).collect())?;
        }
    }
    Ok(())
}

fn refiner_inputs(rng: &mut impl Rng, cfg: &RefinerConfig, h: usize, w: usize) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let x = Tensor::new((0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect(), &[1, 3, h, w])?;
    let masks = random_masks(rng, cfg.mask_channels, h, w);
    let m = Tensor::new(masks.concat().into_iter().map(f64::from).collect(), &[1, cfg.mask_channels, h, w])?;
    Ok((x, m))
}

/// Criterion 6: SPF wiring, identity at init, gate saturation and mask
/// sensitivity.
pub fn spf_structure() -> CheckOutcome {
    const NAME: &str = "SPF structure";
    guard(6, NAME, |start| {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (h, w) = (16, 16);
        let mut counts_ok = true;
        let mut identity_ok = true;
        for n_blocks in [2, 3, 5] {
            let cfg = RefinerConfig {
                n_blocks,
                ..RefinerConfig::default()
            };
            let refiner = Refiner::<f64>::new(&cfg, n_blocks as u64)?;
            let (x, m) = refiner_inputs(&mut rng, &cfg, h, w)?;
            let y = refiner.forward(&x, &m)?;
            counts_ok &= refiner.units().len() == n_blocks && refiner.unit_activations() == vec![1; n_blocks];
            identity_ok &= y.data() == x.data();
            let baseline = BaselineIR::<f64>::new(
                &BaselineIRConfig {
                    n_blocks,
                    ..BaselineIRConfig::default()
                },
                n_blocks as u64,
            )?;
            identity_ok &= baseline.forward(&x)?.data() == x.data();
        }

        let cfg = RefinerConfig::default();
        let mut gated = Refiner::<f64>::new(&cfg, 60)?;
        randomize(gated.params_mut(), "tail.weight", &mut rng)?;
        let store = gated.params_mut();
        for i in 0..store.len() {
            let name = store.names()[i].clone();
            let n = store.tensors()[i].numel();
            if name.ends_with(".gate.weight") {
                store.set(i, vec![0.0; n])?;
            } else if name.ends_with(".gate.bias") {
                store.set(i, vec![50.0; n])?;
            }
        }
        let values: HashMap<String, Vec<f64>> = gated
            .params()
            .snapshot()
            .into_iter()
            .map(|(name, _, v)| (name, v))
            .collect();
        let plain_cfg = RefinerConfig {
            spf: SPFUnitConfig {
                attention: false,
                ..cfg.spf.clone()
            },
            ..cfg.clone()
        };
        let mut plain = Refiner::<f64>::new(&plain_cfg, 61)?;
        plain
            .params_mut()
            .load_with(|name, _| values.get(name).cloned().ok_or_else(|| Error::Weights(format!("no {name}"))))?;
        let (x, m) = refiner_inputs(&mut rng, &cfg, h, w)?;
        let saturation_gap = max_abs_diff(gated.forward(&x, &m)?.data(), plain.forward(&x, &m)?.data());

        let mut probe = Refiner::<f64>::new(&cfg, 62)?;
        randomize(probe.params_mut(), "tail.weight", &mut rng)?;
        let base = probe.forward(&x, &m)?;
        let mut md = m.to_vec();
        let k = 2 * h * w + 5 * w + 7;
        md[k] = 1.0 - md[k];
        let moved = probe.forward(&x, &Tensor::new(md, m.shape())?)?;
        let sensitivity = max_abs_diff(base.data(), moved.data());

        Ok(CheckOutcome::new(
            6,
            NAME,
            counts_ok && identity_ok && saturation_gap < 1e-6 && sensitivity > 0.0,
            format!(
                "unit counts/activations ok {counts_ok}, identity at init {identity_ok}, \
                 saturated-gate gap {saturation_gap:.1e} (tol 1e-6), mask flip moves output by {sensitivity:.1e}"
            ),
            start,
        ))
    })
}

/// Criterion 7: a joint run with both lambdas at zero follows the
/// student-only trajectory bit for bit.
pub fn baseline_equivalence(steps: usize) -> CheckOutcome {
    const NAME: &str = "baseline equivalence";
    guard(7, NAME, |start| {
        let mut cfg = small_config(7);
        cfg.lambda1 = 0.0;
        cfg.lambda2 = 0.0;
        let (train, _) = cfg.data.synthesize()?;
        let mut joint = Trainer::<f64>::new(&cfg, train.clone())?;
        let mut alone = Trainer::<f64>::new(&cfg, train)?;
        let mut first_mismatch = None;
        for step in 1..=steps {
            let (a, _) = joint.step()?;
            let b = alone.student_step()?;
            if first_mismatch.is_none() && a.l_recon1.to_bits() != b.l_recon1.to_bits() {
                first_mismatch = Some(step);
            }
        }
        let params_equal = joint.baseline().params().snapshot() == alone.baseline().params().snapshot();
        let initial = BaselineIR::<f64>::new(&cfg.baseline, sub_seed(cfg.seed, 1))?.params().snapshot();
        let moved = joint.baseline().params().snapshot() != initial;
        Ok(CheckOutcome::new(
            7,
            NAME,
            first_mismatch.is_none() && params_equal && moved,
            format!(
                "{steps} steps (f64); loss trajectories identical {}, final parameters identical {params_equal}",
                first_mismatch.map_or("true".to_string(), |s| format!("false (first at step {s})"))
            ),
            start,
        ))
    })
}

/// Criterion 8, judged from a finished experiment.
pub fn distillation_gain(report: &ExperimentReport) -> CheckOutcome {
    let start = Instant::now();
    let per_seed: Vec<String> = report
        .outcomes
        .iter()
        .map(|o| format!("seed {}: {:+.4}", o.seed, o.delta))
        .collect();
    let mut out = CheckOutcome::new(
        8,
        "directional distillation gain",
        report.mean_delta >= 0.0 && report.elapsed_secs < EXPERIMENT_BUDGET_SECS,
        format!(
            "mean delta {:+.4} dB (need >= 0); {}; runtime {:.1} min (budget 45) on {} worker(s)",
            report.mean_delta,
            per_seed.join(", "),
            report.elapsed_secs / 60.0,
            report.workers
        ),
        start,
    );
    out.secs = report.elapsed_secs;
    out
}

/// Criterion 9: student evaluation touches neither the segmenter, the
/// refiner nor the perceptual extractor.
pub fn inference_contract() -> CheckOutcome {
    const NAME: &str = "inference-efficiency contract";
    guard(9, NAME, |start| {
        let cfg = small_config(9);
        let (train, val) = cfg.data.synthesize()?;
        let mut trainer = Trainer::<f64>::new(&cfg, train)?;
        for _ in 0..2 {
            trainer.step()?;
        }
        let ckpt = Checkpoint::from_bytes(&trainer.checkpoint().to_bytes()?, Path::new("memory"))?;
        let student = evaluate(&ckpt, &val, Which::Student)?;
        let again = evaluate(&ckpt, &val, Which::Student)?;
        let teacher = evaluate(&ckpt, &val, Which::Teacher)?;
        let zero = student.counters == Counters::default();
        let control = teacher.counters.segmenter_calls > 0 && teacher.counters.refiner_forwards > 0;
        Ok(CheckOutcome::new(
            9,
            NAME,
            zero && control && student == again,
            format!(
                "student counters {:?}; teacher control {:?}; repeat identical {}",
                student.counters,
                teacher.counters,
                student == again
            ),
            start,
        ))
    })
}

/// Criterion 10: metric closed forms and oracles, and bitwise resume.
pub fn metrics_and_resume() -> CheckOutcome {
    const NAME: &str = "metrics and resume";
    guard(10, NAME, |start| {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut psnr_err = 0.0f64;
        for &offset in &[0.1, 0.05, 0.01] {
            let a = ImageTensor::filled(3, 16, 16, 0.5)?;
            let b = ImageTensor::filled(3, 16, 16, 0.5 + offset)?;
            let exact = -10.0 * (offset * offset).log10();
            psnr_err = psnr_err.max((psnr(&a, &b)? - exact).abs());
        }
        psnr_err = psnr_err.max((psnr(&ImageTensor::filled(1, 8, 8, 0.3)?, &ImageTensor::filled(1, 8, 8, 0.3)?)? - 100.0).abs());
        let mut ssim_err = 0.0f64;
        let mut identical_ssim = 0.0f64;
        for _ in 0..10 {
            let (c, h, w) = (if rng.random_bool(0.5) { 1 } else { 3 }, 16, 24);
            let a = ImageTensor::from_fn(c, h, w, |_, _, _| rng.random_range(0.0..1.0))?;
            let b = a.map(|v| (v + 0.1 * (v * 7.0).sin()).clamp(0.0, 1.0))?;
            psnr_err = psnr_err.max((psnr(&a, &b)? - psnr_loop(a.as_slice(), b.as_slice())).abs());
            ssim_err = ssim_err.max((ssim(&a, &b)? - ssim_windowed(a.as_slice(), b.as_slice(), c, h, w)).abs());
            identical_ssim = identical_ssim.max((ssim(&a, &a)? - 1.0).abs());
        }

        let mut cfg = small_config(10);
        cfg.steps = 20;
        let (train, _) = cfg.data.synthesize()?;
        let mut straight = Trainer::<f64>::new(&cfg, train.clone())?;
        let mut first = Trainer::<f64>::new(&cfg, train.clone())?;
        for _ in 0..10 {
            straight.step()?;
            first.step()?;
        }
        let ckpt = Checkpoint::from_bytes(&first.checkpoint().to_bytes()?, Path::new("memory"))?;
        drop(first);
        let mut resumed = Trainer::<f64>::from_checkpoint(&ckpt, train)?;
        let mut losses_equal = true;
        for _ in 0..10 {
            let (a, _) = straight.step()?;
            let (b, _) = resumed.step()?;
            losses_equal &= a.total.to_bits() == b.total.to_bits();
        }
        let (a, b) = (straight.checkpoint(), resumed.checkpoint());
        let state_equal = a.tensors == b.tensors && a.sampler == b.sampler && a.step == b.step;

        Ok(CheckOutcome::new(
            10,
            NAME,
            psnr_err < 1e-9 && ssim_err < 1e-6 && identical_ssim < 1e-6 && losses_equal && state_equal,
            format!(
                "psnr err {psnr_err:.1e} (tol 1e-9), ssim err {ssim_err:.1e} (tol 1e-6); \
                 resume after 10 + 10 steps: losses identical {losses_equal}, state identical {state_equal}"
            ),
            start,
        ))
    })
}

/// Every check that runs in seconds: all criteria except the experiment.
pub fn offline_suite() -> Vec<CheckOutcome> {
    vec![
        loss_oracles(100, 1),
        gradient_checks(20, 2),
        smooth_l1_continuity(),
        stop_gradient_contract(10),
        relation_properties(200, 5),
        spf_structure(),
        baseline_equivalence(50),
        inference_contract(),
        metrics_and_resume(),
    ]
}

/// Table of outcomes, one line each, and a summary line.
pub fn render_table(outcomes: &[CheckOutcome]) -> String {
    let mut out: Vec<String> = outcomes.iter().map(CheckOutcome::line).collect();
    let passed = outcomes.iter().filter(|o| o.passed).count();
    out.push(format!("{passed}/{} checks passed", outcomes.len()));
    out.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrant_masks_overlap_and_survive_downsampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = quadrant_masks(&mut rng, 5, 16, 16).unwrap();
        assert_eq!(m.n(), 5);
        let low = m.resized(2, 2).unwrap();
        assert!(low.areas().iter().all(|&a| a > 0));
        assert!(!m.is_disjoint() || m.n() == 1);
    }

    #[test]
    fn partition_masks_tile_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let parts = partition_masks(&mut rng, 4, 3, 5);
        for p in 0..15 {
            assert_eq!(parts.iter().map(|m| m[p]).sum::<u8>(), 1);
        }
        assert!(parts.iter().all(|m| m.contains(&1)));
    }

    #[test]
    fn table_lines() {
        let o = CheckOutcome {
            id: 3,
            name: "x".into(),
            passed: false,
            detail: "d".into(),
            secs: 0.5,
        };
        assert!(o.line().starts_with("[FAIL]  3 x"));
        assert!(render_table(&[o]).ends_with("0/1 checks passed"));
    }
}
