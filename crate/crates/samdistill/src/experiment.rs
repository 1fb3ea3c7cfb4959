//! Distilled versus baseline-only students on the synthetic task, over
//! several seeds.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{load_manifest, PairedSample};
use crate::error::{Error, Result};
use crate::train::{train_on, RunOptions, TrainConfig};

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    /// Config of the distilled runs; the baseline runs zero both lambdas.
    pub base: TrainConfig,
    pub seeds: Vec<u64>,
    /// Concurrent training runs; 0 uses the available cores.
    pub workers: usize,
    /// Write the datasets here as PNG and train from the files; `None`
    /// keeps the pairs in memory.
    pub data_root: Option<PathBuf>,
    /// Per-run output directories (logs, config echo, checkpoints) go under
    /// `out_root/seed{seed}_{distilled,baseline}`.
    pub out_root: Option<PathBuf>,
    pub verbose: bool,
}

impl ExperimentConfig {
    pub fn new(base: TrainConfig, seeds: Vec<u64>) -> Self {
        Self {
            base,
            seeds,
            workers: 0,
            data_root: None,
            out_root: None,
            verbose: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub distilled_psnr: f64,
    pub baseline_psnr: f64,
    /// Cascade output of the distilled run.
    pub teacher_psnr: Option<f64>,
    pub delta: f64,
    pub distilled_secs: f64,
    pub baseline_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub outcomes: Vec<SeedOutcome>,
    pub mean_delta: f64,
    pub input_psnr: f64,
    pub elapsed_secs: f64,
    pub workers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Arm {
    Distilled,
    Baseline,
}

struct ArmResult {
    seed: u64,
    arm: Arm,
    psnr: f64,
    teacher: Option<f64>,
    secs: f64,
}

fn datasets(cfg: &ExperimentConfig) -> Result<(Vec<PairedSample>, Vec<PairedSample>)> {
    let Some(root) = &cfg.data_root else {
        return cfg.base.data.synthesize();
    };
    let (train, val) = cfg.base.data.generate(root)?;
    let val = match val {
        Some(m) => load_manifest(&m.path())?.load_samples()?,
        None => Vec::new(),
    };
    Ok((load_manifest(&train.path())?.load_samples()?, val))
}

fn input_psnr(samples: &[PairedSample]) -> Result<f64> {
    let mut acc = 0.0;
    for s in samples {
        acc += samdistill_core::psnr(&s.lq, &s.hq)?;
    }
    Ok(acc / samples.len() as f64)
}

/// Trains every (seed, arm) pair and compares final validation PSNR of
/// the students. Baseline arms train the student alone, which matches a
/// joint run with both lambdas at zero step for step.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("experiment needs at least one seed".into()));
    }
    cfg.base.validate()?;
    let start = Instant::now();
    let (train_set, val_set) = datasets(cfg)?;
    if val_set.is_empty() {
        return Err(Error::Config("experiment needs a validation split (data.val_count > 0)".into()));
    }

    let jobs: Vec<(u64, Arm)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| [(s, Arm::Distilled), (s, Arm::Baseline)])
        .collect();
    let workers = match cfg.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len());

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<ArmResult>>> = Mutex::new(Vec::new());
    let run_job = |(seed, arm): (u64, Arm)| -> Result<ArmResult> {
        let mut run_cfg = cfg.base.clone();
        run_cfg.seed = seed;
        run_cfg.val_every = 0;
        let student_only = arm == Arm::Baseline;
        if student_only {
            run_cfg.lambda1 = 0.0;
            run_cfg.lambda2 = 0.0;
        }
        let name = format!("seed{seed}_{}", if student_only { "baseline" } else { "distilled" });
        let opts = RunOptions {
            out_dir: cfg.out_root.as_ref().map(|r| r.join(&name)),
            student_only,
            audit: false,
            verbose: false,
        };
        let t0 = Instant::now();
        let summary = train_on(&run_cfg, train_set.clone(), &val_set, &opts)?;
        let secs = t0.elapsed().as_secs_f64();
        let psnr = summary
            .val_psnr1
            .ok_or_else(|| Error::Config("run finished without validation".into()))?;
        if cfg.verbose {
            eprintln!("{name}: student val PSNR {psnr:.4} dB in {secs:.0} s");
        }
        Ok(ArmResult {
            seed,
            arm,
            psnr,
            teacher: summary.val_psnr2,
            secs,
        })
    };
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&job) = jobs.get(i) else { break };
                let r = run_job(job);
                results.lock().expect("result lock").push(r);
            });
        }
    });

    let results = results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let find = |seed: u64, arm: Arm| {
        results
            .iter()
            .find(|r| r.seed == seed && r.arm == arm)
            .expect("every job reports")
    };
    let outcomes: Vec<SeedOutcome> = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let (d, b) = (find(seed, Arm::Distilled), find(seed, Arm::Baseline));
            SeedOutcome {
                seed,
                distilled_psnr: d.psnr,
                baseline_psnr: b.psnr,
                teacher_psnr: d.teacher,
                delta: d.psnr - b.psnr,
                distilled_secs: d.secs,
                baseline_secs: b.secs,
            }
        })
        .collect();
    let mean_delta = outcomes.iter().map(|o| o.delta).sum::<f64>() / outcomes.len() as f64;
    Ok(ExperimentReport {
        mean_delta,
        input_psnr: input_psnr(&val_set)?,
        outcomes,
        elapsed_secs: start.elapsed().as_secs_f64(),
        workers,
    })
}
