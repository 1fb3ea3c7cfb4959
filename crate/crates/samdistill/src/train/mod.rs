//! Joint training of the cascade, checkpoints and evaluation.

mod checkpoint;
mod config;
mod optim;
mod sampler;
mod trainer;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use autograd::Element;
use samdistill_core::{psnr, ssim, ImageTensor};
use serde::{Deserialize, Serialize};

use crate::data::{load_manifest, PairedSample};
use crate::error::{io_err, Error, Result};
use crate::instrument::Counters;
use crate::models::{images_to_tensor, pack_mask_batch, tensor_to_images, BaselineIR, Refiner};
use crate::segmenter::{build_segmenter, canonicalize};

pub use checkpoint::{Checkpoint, StoredTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{valid_keys, DataConfig, OptimizerConfig, OptimizerKind, Precision, TrainConfig};
pub use optim::Adam;
pub use sampler::{Sampler, SamplerState};
pub use trainer::{load_params, StepAudit, TrainLogRecord, Trainer};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_ECHO: &str = "config.toml";

/// How a training run is carried out beyond its config.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Where the config echo, log and (by default) checkpoints go.
    pub out_dir: Option<PathBuf>,
    /// Train the baseline alone on its reconstruction loss.
    pub student_only: bool,
    /// Measure gradient isolation every step.
    pub audit: bool,
    /// Print log records to stderr.
    pub verbose: bool,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: Checkpoint,
    pub records: Vec<TrainLogRecord>,
    pub audits: Vec<StepAudit>,
    /// Final validation PSNR of the baseline.
    pub val_psnr1: Option<f64>,
    /// Final validation PSNR of the cascade (not computed for student-only runs).
    pub val_psnr2: Option<f64>,
}

/// Loads the manifests named in `cfg` and trains.
pub fn train(cfg: &TrainConfig, opts: &RunOptions) -> Result<TrainSummary> {
    if cfg.train_manifest.is_empty() {
        return Err(Error::Config("train_manifest is not set".into()));
    }
    let train_set = load_manifest(Path::new(&cfg.train_manifest))?.load_samples()?;
    let val_set = if cfg.val_manifest.is_empty() {
        Vec::new()
    } else {
        load_manifest(Path::new(&cfg.val_manifest))?.load_samples()?
    };
    train_on(cfg, train_set, &val_set, opts)
}

/// Trains on in-memory samples in the configured precision.
pub fn train_on(
    cfg: &TrainConfig,
    train_set: Vec<PairedSample>,
    val_set: &[PairedSample],
    opts: &RunOptions,
) -> Result<TrainSummary> {
    match cfg.precision {
        Precision::F32 => run::<f32>(Trainer::new(cfg, train_set)?, val_set, opts),
        Precision::F64 => run::<f64>(Trainer::new(cfg, train_set)?, val_set, opts),
    }
}

/// Continues a run from a checkpoint until `ckpt.config.steps`.
pub fn resume(ckpt: &Checkpoint, train_set: Vec<PairedSample>, val_set: &[PairedSample], opts: &RunOptions) -> Result<TrainSummary> {
    match ckpt.config.precision {
        Precision::F32 => run::<f32>(Trainer::from_checkpoint(ckpt, train_set)?, val_set, opts),
        Precision::F64 => run::<f64>(Trainer::from_checkpoint(ckpt, train_set)?, val_set, opts),
    }
}

struct RunOutput {
    log: Option<fs::File>,
    log_path: PathBuf,
    ckpt_dir: Option<PathBuf>,
}

impl RunOutput {
    fn open(cfg: &TrainConfig, opts: &RunOptions) -> Result<Self> {
        let ckpt_dir = if !cfg.checkpoint_dir.is_empty() {
            Some(PathBuf::from(&cfg.checkpoint_dir))
        } else {
            opts.out_dir.as_ref().map(|d| d.join("checkpoints"))
        };
        let Some(out) = &opts.out_dir else {
            return Ok(Self {
                log: None,
                log_path: PathBuf::new(),
                ckpt_dir,
            });
        };
        fs::create_dir_all(out).map_err(io_err(out))?;
        let echo = out.join(CONFIG_ECHO);
        fs::write(&echo, cfg.to_toml_string()?).map_err(io_err(&echo))?;
        let log_path = out.join(LOG_FILE);
        let log = fs::File::create(&log_path).map_err(io_err(&log_path))?;
        Ok(Self {
            log: Some(log),
            log_path,
            ckpt_dir,
        })
    }

    fn write(&mut self, record: &TrainLogRecord, verbose: bool) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::Config(e.to_string()))?;
        if verbose {
            eprintln!("{line}");
        }
        if let Some(f) = self.log.as_mut() {
            writeln!(f, "{line}").map_err(io_err(&self.log_path))?;
        }
        Ok(())
    }

    fn save(&self, ckpt: &Checkpoint, name: &str) -> Result<()> {
        if let Some(dir) = &self.ckpt_dir {
            ckpt.save(&dir.join(name))?;
        }
        Ok(())
    }
}

fn run<T: Element>(mut trainer: Trainer<T>, val_set: &[PairedSample], opts: &RunOptions) -> Result<TrainSummary> {
    let cfg = trainer.config().clone();
    let mut out = RunOutput::open(&cfg, opts)?;
    trainer.set_audit(opts.audit);
    let mut records = Vec::new();
    let mut audits = Vec::new();
    let validate = |t: &Trainer<T>| -> Result<(f64, Option<f64>)> {
        if opts.student_only {
            Ok((t.validate_student(val_set)?, None))
        } else {
            let (a, b) = t.validate(val_set)?;
            Ok((a, Some(b)))
        }
    };

    while (trainer.step_count() as usize) < cfg.steps {
        let mut record = if opts.student_only {
            trainer.student_step()?
        } else {
            let (r, a) = trainer.step()?;
            audits.extend(a);
            r
        };
        let step = trainer.step_count() as usize;
        let last = step == cfg.steps;
        if !val_set.is_empty() && !last && cfg.val_every > 0 && step.is_multiple_of(cfg.val_every) {
            let (p1, p2) = validate(&trainer)?;
            record.val_psnr1 = Some(p1);
            record.val_psnr2 = p2;
        }
        // The final record is written after the closing validation.
        let final_pending = last && !val_set.is_empty();
        if (step.is_multiple_of(cfg.log_every) || record.val_psnr1.is_some() || last) && !final_pending {
            out.write(&record, opts.verbose)?;
        }
        if cfg.checkpoint_every > 0 && step.is_multiple_of(cfg.checkpoint_every) && !last {
            out.save(&trainer.checkpoint(), &format!("step_{step:06}.ckpt"))?;
        }
        records.push(record);
    }

    let (mut val_psnr1, mut val_psnr2) = (None, None);
    if !val_set.is_empty() {
        let (p1, p2) = validate(&trainer)?;
        val_psnr1 = Some(p1);
        val_psnr2 = p2;
        if let Some(last) = records.last_mut() {
            last.val_psnr1 = val_psnr1;
            last.val_psnr2 = val_psnr2;
            out.write(last, opts.verbose)?;
        }
    }
    let checkpoint = trainer.checkpoint();
    out.save(&checkpoint, "final.ckpt")?;
    Ok(TrainSummary {
        checkpoint,
        records,
        audits,
        val_psnr1,
        val_psnr2,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Student,
    Teacher,
}

impl std::str::FromStr for Which {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "student" => Ok(Which::Student),
            "teacher" => Ok(Which::Teacher),
            other => Err(Error::Config(format!("--which must be student or teacher, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub which: Which,
    pub label: String,
    pub step: u64,
    pub samples: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Same metrics for the unrestored inputs.
    pub input_psnr: f64,
    pub input_ssim: f64,
    /// Component activity during this evaluation.
    pub counters: Counters,
}

/// Mean PSNR/SSIM of the student (baseline alone) or the teacher (full
/// cascade) over `samples`. The student path builds and runs nothing but
/// the baseline.
pub fn evaluate(ckpt: &Checkpoint, samples: &[PairedSample], which: Which) -> Result<EvalReport> {
    match ckpt.config.precision {
        Precision::F32 => evaluate_as::<f32>(ckpt, samples, which),
        Precision::F64 => evaluate_as::<f64>(ckpt, samples, which),
    }
}

fn evaluate_as<T: Element>(ckpt: &Checkpoint, samples: &[PairedSample], which: Which) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty split".into()));
    }
    let before = Counters::now();
    let cfg = &ckpt.config;
    let mut baseline = BaselineIR::<T>::new(&cfg.baseline, 0)?;
    load_params(baseline.params_mut(), ckpt)?;
    let baseline = baseline.frozen();

    let restored: Vec<ImageTensor> = match which {
        Which::Student => {
            let mut out = Vec::with_capacity(samples.len());
            for chunk in samples.chunks(cfg.batch_size.max(1)) {
                let lq: Vec<&ImageTensor> = chunk.iter().map(|s| &s.lq).collect();
                out.extend(tensor_to_images(&baseline.forward(&images_to_tensor(&lq)?)?)?);
            }
            out
        }
        Which::Teacher => {
            let mut refiner = Refiner::<T>::new(&cfg.refiner, 0)?;
            load_params(refiner.params_mut(), ckpt)?;
            let refiner = refiner.frozen();
            let segmenter = build_segmenter(&cfg.segmenter)?;
            let mut out = Vec::with_capacity(samples.len());
            for chunk in samples.chunks(cfg.batch_size.max(1)) {
                let lq: Vec<&ImageTensor> = chunk.iter().map(|s| &s.lq).collect();
                let lq = images_to_tensor::<T>(&lq)?;
                let hq1 = baseline.forward(&lq)?;
                let masks = tensor_to_images(&hq1)?
                    .iter()
                    .zip(chunk)
                    .map(|(img, s)| canonicalize(&segmenter.segment(&s.id, &img.clamp01())?, cfg.segmenter.n_max))
                    .collect::<Result<Vec<_>>>()?;
                let packed = pack_mask_batch::<T>(&masks, cfg.segmenter.n_max, lq.dim(2), lq.dim(3))?;
                out.extend(tensor_to_images(&refiner.forward(&hq1, &packed)?)?);
            }
            out
        }
    };

    let mut acc = [0.0f64; 4];
    for (img, s) in restored.iter().zip(samples) {
        let img = img.clamp01();
        acc[0] += psnr(&img, &s.hq)?;
        acc[1] += ssim(&img, &s.hq)?;
        acc[2] += psnr(&s.lq, &s.hq)?;
        acc[3] += ssim(&s.lq, &s.hq)?;
    }
    let n = samples.len() as f64;
    Ok(EvalReport {
        which,
        label: cfg.label().to_string(),
        step: ckpt.step,
        samples: samples.len(),
        psnr: acc[0] / n,
        ssim: acc[1] / n,
        input_psnr: acc[2] / n,
        input_ssim: acc[3] / n,
        counters: Counters::since(before),
    })
}
