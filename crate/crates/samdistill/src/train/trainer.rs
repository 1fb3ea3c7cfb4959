use std::collections::HashMap;

use autograd::{Element, Gradients, Tensor};
use samdistill_core::{psnr, ImageTensor, MaskSet};
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, StoredTensor};
use super::config::TrainConfig;
use super::optim::Adam;
use super::sampler::Sampler;
use crate::data::{sub_seed, PairedSample};
use crate::distill::{l1, spd_sgr_losses, Perceptual};
use crate::error::{Error, Result};
use crate::models::{images_to_tensor, pack_mask_batch, tensor_to_images, BaselineIR, ParamStore, Refiner};
use crate::segmenter::{build_segmenter, canonicalize, Segmenter};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub label: String,
    pub l_recon1: f64,
    pub l_recon2: f64,
    pub l_spd: f64,
    pub l_sgr: f64,
    pub total: f64,
    pub val_psnr1: Option<f64>,
    pub val_psnr2: Option<f64>,
    pub sgr_skips: usize,
}

impl TrainLogRecord {
    pub fn is_finite(&self) -> bool {
        [self.l_recon1, self.l_recon2, self.l_spd, self.l_sgr, self.total]
            .iter()
            .chain(self.val_psnr1.iter())
            .chain(self.val_psnr2.iter())
            .all(|v| v.is_finite())
    }
}

/// Gradient isolation measured during one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepAudit {
    pub step: u64,
    /// Largest |gradient| of `lambda1 * l_spd + lambda2 * l_sgr` over refiner parameters.
    pub refiner_distill_grad_max: f64,
    /// Refiner parameters reached by that backward pass at all.
    pub refiner_params_reached: usize,
    /// Largest |gradient| of the refiner's reconstruction loss over baseline parameters.
    pub baseline_recon2_grad_max: f64,
}

struct CascadeLosses<T: Element> {
    l_recon1: Tensor<T>,
    l_recon2: Tensor<T>,
    l_spd: Tensor<T>,
    l_sgr: Tensor<T>,
    sgr_skips: usize,
}

fn max_abs_grad<T: Element>(params: &ParamStore<T>, grads: &Gradients<T>) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut reached = 0;
    for p in params.tensors() {
        if let Some(g) = grads.get(p) {
            reached += 1;
            worst = g.iter().fold(worst, |w, v| w.max(v.as_f64().abs()));
        }
    }
    (worst, reached)
}

/// Runs `f` over `samples` in chunks of `batch`, collecting per-sample values.
fn per_chunk<'a, R>(
    samples: &'a [PairedSample],
    batch: usize,
    mut f: impl FnMut(&[&'a PairedSample]) -> Result<Vec<R>>,
) -> Result<Vec<R>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&PairedSample> = chunk.iter().collect();
        out.extend(f(&refs)?);
    }
    Ok(out)
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Full training state for one precision.
pub struct Trainer<T: Element> {
    cfg: TrainConfig,
    baseline: BaselineIR<T>,
    refiner: Refiner<T>,
    perceptual: Perceptual<T>,
    segmenter: Box<dyn Segmenter>,
    opt_baseline: Adam<T>,
    opt_refiner: Adam<T>,
    sampler: Sampler,
    step: u64,
    train_set: Vec<PairedSample>,
    mask_cache: HashMap<String, (u64, MaskSet)>,
    audit: bool,
}

impl<T: Element> Trainer<T> {
    pub fn new(cfg: &TrainConfig, train_set: Vec<PairedSample>) -> Result<Self> {
        cfg.validate()?;
        if train_set.is_empty() {
            return Err(Error::Dataset("empty training set".into()));
        }
        let baseline = BaselineIR::new(&cfg.baseline, sub_seed(cfg.seed, 1))?;
        let refiner = Refiner::new(&cfg.refiner, sub_seed(cfg.seed, 2))?;
        Ok(Self {
            opt_baseline: Adam::new(&cfg.optimizer, baseline.params()),
            opt_refiner: Adam::new(&cfg.optimizer, refiner.params()),
            perceptual: Perceptual::build(&cfg.perceptual)?,
            segmenter: build_segmenter(&cfg.segmenter)?,
            sampler: Sampler::new(train_set.len(), sub_seed(cfg.seed, 3))?,
            cfg: cfg.clone(),
            baseline,
            refiner,
            step: 0,
            train_set,
            mask_cache: HashMap::new(),
            audit: false,
        })
    }

    /// Restores the exact state stored in `ckpt`.
    pub fn from_checkpoint(ckpt: &Checkpoint, train_set: Vec<PairedSample>) -> Result<Self> {
        if ckpt.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "checkpoint was written in {}, resuming in {}",
                ckpt.dtype,
                T::DTYPE
            )));
        }
        let mut t = Self::new(&ckpt.config, train_set)?;
        load_params(t.baseline.params_mut(), ckpt)?;
        load_params(t.refiner.params_mut(), ckpt)?;
        restore_adam(&mut t.opt_baseline, t.baseline.params(), ckpt, ckpt.baseline_opt_steps)?;
        restore_adam(&mut t.opt_refiner, t.refiner.params(), ckpt, ckpt.refiner_opt_steps)?;
        t.sampler = Sampler::from_state(&ckpt.sampler)?;
        if t.sampler.len() != t.train_set.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint sampled {} training pairs, dataset has {}",
                t.sampler.len(),
                t.train_set.len()
            )));
        }
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn baseline(&self) -> &BaselineIR<T> {
        &self.baseline
    }

    pub fn refiner(&self) -> &Refiner<T> {
        &self.refiner
    }

    pub fn perceptual(&self) -> &Perceptual<T> {
        &self.perceptual
    }

    pub fn segmenter(&self) -> &dyn Segmenter {
        self.segmenter.as_ref()
    }

    /// Also measure gradient isolation on every step (costs two extra
    /// backward passes).
    pub fn set_audit(&mut self, on: bool) {
        self.audit = on;
    }

    fn batch_tensors(&self, batch: &[&PairedSample]) -> Result<(Tensor<T>, Tensor<T>)> {
        let lq: Vec<&ImageTensor> = batch.iter().map(|s| &s.lq).collect();
        let hq: Vec<&ImageTensor> = batch.iter().map(|s| &s.hq).collect();
        Ok((images_to_tensor(&lq)?, images_to_tensor(&hq)?))
    }

    fn segment_fresh(&self, id: &str, img: &ImageTensor) -> Result<MaskSet> {
        canonicalize(&self.segmenter.segment(id, &img.clamp01())?, self.cfg.segmenter.n_max)
    }

    /// Masks of the restored images, reusing cached ones within a refresh window.
    fn masks_for(&mut self, batch: &[&PairedSample], hq1: &Tensor<T>) -> Result<Vec<MaskSet>> {
        let images = tensor_to_images(hq1)?;
        let interval = self.cfg.mask_refresh_interval as u64;
        let bucket = self.step / interval;
        let mut out = Vec::with_capacity(batch.len());
        for (s, img) in batch.iter().zip(&images) {
            if interval > 1 {
                if let Some((b, m)) = self.mask_cache.get(&s.id) {
                    if *b == bucket {
                        out.push(m.clone());
                        continue;
                    }
                }
            }
            let m = self.segment_fresh(&s.id, img)?;
            if interval > 1 {
                self.mask_cache.insert(s.id.clone(), (bucket, m.clone()));
            }
            out.push(m);
        }
        Ok(out)
    }

    fn cascade(
        &self,
        refiner: &Refiner<T>,
        lq: &Tensor<T>,
        gt: &Tensor<T>,
        hq1: &Tensor<T>,
        masks: &[MaskSet],
    ) -> Result<CascadeLosses<T>> {
        let (h, w) = (lq.dim(2), lq.dim(3));
        let packed = pack_mask_batch::<T>(masks, self.cfg.segmenter.n_max, h, w)?;
        let refiner_in = if self.cfg.detach_cascade_input { hq1.detach() } else { hq1.clone() };
        let hq2 = refiner.forward(&refiner_in, &packed)?;
        let distill = spd_sgr_losses(hq1, &hq2, masks, &self.perceptual, self.cfg.relation_vectors)?;
        Ok(CascadeLosses {
            l_recon1: l1(hq1, gt)?,
            l_recon2: l1(&hq2, gt)?,
            l_spd: distill.l_spd,
            l_sgr: distill.l_sgr,
            sgr_skips: distill.sgr_skips,
        })
    }

    fn record(&self, c: &CascadeLosses<T>, total: f64) -> Result<TrainLogRecord> {
        Ok(TrainLogRecord {
            step: self.step,
            label: self.cfg.label().to_string(),
            l_recon1: c.l_recon1.item()?.as_f64(),
            l_recon2: c.l_recon2.item()?.as_f64(),
            l_spd: c.l_spd.item()?.as_f64(),
            l_sgr: c.l_sgr.item()?.as_f64(),
            total,
            val_psnr1: None,
            val_psnr2: None,
            sgr_skips: c.sgr_skips,
        })
    }

    /// Draws the next batch and runs one joint step.
    pub fn step(&mut self) -> Result<(TrainLogRecord, Option<StepAudit>)> {
        let idx = self.sampler.next_batch(self.cfg.batch_size);
        self.train_step(&idx)
    }

    /// One joint update of both models on the given training indices.
    pub fn train_step(&mut self, indices: &[usize]) -> Result<(TrainLogRecord, Option<StepAudit>)> {
        let samples: Vec<PairedSample> = indices.iter().map(|&i| self.train_set[i].clone()).collect();
        let batch: Vec<&PairedSample> = samples.iter().collect();
        let (lq, gt) = self.batch_tensors(&batch)?;
        let hq1 = self.baseline.forward(&lq)?;
        let masks = self.masks_for(&batch, &hq1)?;
        let c = self.cascade(&self.refiner, &lq, &gt, &hq1, &masks)?;

        let (l1w, l2w) = (T::of(self.cfg.lambda1), T::of(self.cfg.lambda2));
        let distill = c.l_spd.scale(l1w).add(&c.l_sgr.scale(l2w))?;
        let student = c.l_recon1.add(&distill)?;
        let total = student.add(&c.l_recon2)?;
        self.step += 1;
        let record = self.record(&c, total.item()?.as_f64())?;
        if !record.is_finite() {
            return Err(Error::NonFiniteLoss { record: Box::new(record) });
        }

        let audit = if self.audit {
            let g = distill.backward()?;
            let (refiner_distill_grad_max, refiner_params_reached) = max_abs_grad(self.refiner.params(), &g);
            let g = c.l_recon2.backward()?;
            let (baseline_recon2_grad_max, _) = max_abs_grad(self.baseline.params(), &g);
            Some(StepAudit {
                step: self.step,
                refiner_distill_grad_max,
                refiner_params_reached,
                baseline_recon2_grad_max,
            })
        } else {
            None
        };

        let grads = total.backward()?;
        self.opt_baseline.step(self.baseline.params_mut(), &grads)?;
        self.opt_refiner.step(self.refiner.params_mut(), &grads)?;
        Ok((record, audit))
    }

    /// Draws the next batch and updates the baseline alone on its
    /// reconstruction loss; the refiner is left untouched.
    pub fn student_step(&mut self) -> Result<TrainLogRecord> {
        let indices = self.sampler.next_batch(self.cfg.batch_size);
        let batch: Vec<&PairedSample> = indices.iter().map(|&i| &self.train_set[i]).collect();
        let (lq, gt) = self.batch_tensors(&batch)?;
        let loss = l1(&self.baseline.forward(&lq)?, &gt)?;
        self.step += 1;
        let v = loss.item()?.as_f64();
        let record = TrainLogRecord {
            step: self.step,
            label: "baseline-only".into(),
            l_recon1: v,
            l_recon2: 0.0,
            l_spd: 0.0,
            l_sgr: 0.0,
            total: v,
            val_psnr1: None,
            val_psnr2: None,
            sgr_skips: 0,
        };
        if !record.is_finite() {
            return Err(Error::NonFiniteLoss { record: Box::new(record) });
        }
        let grads = loss.backward()?;
        self.opt_baseline.step(self.baseline.params_mut(), &grads)?;
        Ok(record)
    }

    /// Total joint loss on training indices with the current parameters,
    /// without updating anything.
    pub fn batch_loss(&self, indices: &[usize]) -> Result<f64> {
        let batch: Vec<&PairedSample> = indices.iter().map(|&i| &self.train_set[i]).collect();
        let (b, r) = (self.baseline.frozen(), self.refiner.frozen());
        let (lq, gt) = self.batch_tensors(&batch)?;
        let hq1 = b.forward(&lq)?;
        let masks = tensor_to_images(&hq1)?
            .iter()
            .zip(&batch)
            .map(|(img, s)| self.segment_fresh(&s.id, img))
            .collect::<Result<Vec<_>>>()?;
        let c = self.cascade(&r, &lq, &gt, &hq1, &masks)?;
        let total = c.l_recon1.as_f64_item()?
            + self.cfg.lambda1 * c.l_spd.as_f64_item()?
            + self.cfg.lambda2 * c.l_sgr.as_f64_item()?
            + c.l_recon2.as_f64_item()?;
        Ok(total)
    }

    /// Mean PSNR of the baseline and of the full cascade over `samples`.
    pub fn validate(&self, samples: &[PairedSample]) -> Result<(f64, f64)> {
        if samples.is_empty() {
            return Err(Error::Dataset("empty validation set".into()));
        }
        let (b, r) = (self.baseline.frozen(), self.refiner.frozen());
        let n_max = self.cfg.segmenter.n_max;
        let pairs = per_chunk(samples, self.cfg.batch_size, |batch| {
            let (lq, _) = self.batch_tensors(batch)?;
            let hq1 = b.forward(&lq)?;
            let imgs1 = tensor_to_images(&hq1)?;
            let masks = imgs1
                .iter()
                .zip(batch)
                .map(|(img, s)| self.segment_fresh(&s.id, img))
                .collect::<Result<Vec<_>>>()?;
            let packed = pack_mask_batch::<T>(&masks, n_max, lq.dim(2), lq.dim(3))?;
            let imgs2 = tensor_to_images(&r.forward(&hq1, &packed)?)?;
            batch
                .iter()
                .zip(imgs1.iter().zip(&imgs2))
                .map(|(s, (a, b))| Ok((psnr(&a.clamp01(), &s.hq)?, psnr(&b.clamp01(), &s.hq)?)))
                .collect()
        })?;
        let p1: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let p2: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        Ok((mean(&p1), mean(&p2)))
    }

    /// Mean PSNR of the baseline alone over `samples`.
    pub fn validate_student(&self, samples: &[PairedSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Dataset("empty validation set".into()));
        }
        let b = self.baseline.frozen();
        let v = per_chunk(samples, self.cfg.batch_size, |batch| {
            let (lq, _) = self.batch_tensors(batch)?;
            tensor_to_images(&b.forward(&lq)?)?
                .iter()
                .zip(batch)
                .map(|(img, s)| Ok(psnr(&img.clamp01(), &s.hq)?))
                .collect()
        })?;
        Ok(mean(&v))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = std::collections::BTreeMap::new();
        let mut put = |store: &ParamStore<T>, opt: &Adam<T>| {
            let (m, v) = opt.moments();
            for (i, (name, shape, values)) in store.snapshot().into_iter().enumerate() {
                let widen = |x: &[T]| x.iter().map(|v| v.as_f64()).collect::<Vec<f64>>();
                tensors.insert(
                    format!("adam/{name}/m"),
                    StoredTensor {
                        shape: shape.clone(),
                        values: widen(&m[i]),
                    },
                );
                tensors.insert(
                    format!("adam/{name}/v"),
                    StoredTensor {
                        shape: shape.clone(),
                        values: widen(&v[i]),
                    },
                );
                tensors.insert(name, StoredTensor { shape, values });
            }
        };
        put(self.baseline.params(), &self.opt_baseline);
        put(self.refiner.params(), &self.opt_refiner);
        Checkpoint {
            config: self.cfg.clone(),
            step: self.step,
            dtype: T::DTYPE.to_string(),
            sampler: self.sampler.state(),
            baseline_opt_steps: self.opt_baseline.steps_taken(),
            refiner_opt_steps: self.opt_refiner.steps_taken(),
            tensors,
        }
    }
}

trait ItemF64 {
    fn as_f64_item(&self) -> Result<f64>;
}

impl<T: Element> ItemF64 for Tensor<T> {
    fn as_f64_item(&self) -> Result<f64> {
        Ok(self.item()?.as_f64())
    }
}

fn stored<'a>(ckpt: &'a Checkpoint, name: &str, shape: &[usize]) -> Result<&'a StoredTensor> {
    let t = ckpt.tensor(name)?;
    if t.shape != shape {
        return Err(Error::Checkpoint(format!(
            "{name}: stored shape {:?}, model expects {shape:?}",
            t.shape
        )));
    }
    Ok(t)
}

/// Copies the parameters named in `store` out of `ckpt`.
pub fn load_params<T: Element>(store: &mut ParamStore<T>, ckpt: &Checkpoint) -> Result<()> {
    store.load_with(|name, shape| Ok(stored(ckpt, name, shape)?.values.clone()))
}

fn restore_adam<T: Element>(opt: &mut Adam<T>, store: &ParamStore<T>, ckpt: &Checkpoint, t: u64) -> Result<()> {
    let mut m = Vec::with_capacity(store.len());
    let mut v = Vec::with_capacity(store.len());
    for (name, p) in store.iter() {
        let narrow = |s: &StoredTensor| s.values.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
        m.push(narrow(stored(ckpt, &format!("adam/{name}/m"), p.shape())?));
        v.push(narrow(stored(ckpt, &format!("adam/{name}/v"), p.shape())?));
    }
    opt.restore(t, m, v)
}
