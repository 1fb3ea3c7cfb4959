//! Command-line entry point.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use samdistill_core::io::save_masks;

use crate::data::load_manifest;
use crate::error::{io_err, Error, Result};
use crate::experiment::{run_experiment, ExperimentConfig};
use crate::segmenter::{build_segmenter, canonicalize, SegmenterKind};
use crate::train::{evaluate, train, Checkpoint, RunOptions, TrainConfig, Which, CONFIG_ECHO};
use crate::verify::{distillation_gain, offline_suite};

/// Environment variable naming the segmenter cache directory.
pub const CACHE_ENV: &str = "SAMDISTILL_CACHE";

#[derive(Debug, Parser)]
#[command(name = "samdistill", version, about = "Semantic-prior distillation for image restoration")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML training config.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Dotted-path assignment applied after loading, e.g. `refiner.n_blocks=3`.
    #[arg(long = "override", global = true, value_name = "K=V")]
    pub overrides: Vec<String>,
    /// Replaces the config's `seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic train/val pairs described by `[data]`.
    GenData,
    /// Precompute masks for every image of a manifest.
    Segment {
        /// Defaults to the config's `train_manifest`.
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        /// Which image of each pair to segment.
        #[arg(long, value_enum, default_value_t = Source::Lq)]
        source: Source,
    },
    /// Train the cascade (or the baseline alone with both lambdas at zero).
    Train {
        /// Measure gradient isolation every step.
        #[arg(long)]
        audit: bool,
        /// Print every log record to stderr.
        #[arg(long)]
        verbose: bool,
    },
    /// Evaluate a checkpoint on a split.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = WhichArg::Student)]
        which: WhichArg,
        /// Defaults to the checkpoint config's `val_manifest`.
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
    },
    /// Run the offline verification suite and print a pass/fail table.
    Verify {
        /// Also run the multi-seed distillation experiment (long).
        #[arg(long)]
        experiment: bool,
        /// Seeds of the experiment.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Concurrent training runs of the experiment; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Source {
    Lq,
    Hq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WhichArg {
    Student,
    Teacher,
}

impl From<WhichArg> for Which {
    fn from(w: WhichArg) -> Self {
        match w {
            WhichArg::Student => Which::Student,
            WhichArg::Teacher => Which::Teacher,
        }
    }
}

/// Failure of one invocation, mapped onto the exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(Error),
    Checks,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code: 0 on success, 1 on user error, 2 on internal
/// error or failed verification.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            eprintln!("{}", Cli::command().render_usage());
            1
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
        Err(Failure::Checks) => 2,
    }
}

/// Config file plus overrides and `--seed`; `None` when no `--config` was given.
fn effective_config(g: &GlobalArgs) -> std::result::Result<Option<TrainConfig>, Failure> {
    let Some(path) = &g.config else {
        if !g.overrides.is_empty() || g.seed.is_some() {
            return Err(Failure::Usage("--override and --seed need --config".into()));
        }
        return Ok(None);
    };
    if !path.is_file() {
        return Err(Failure::Usage(format!("config file {} not found", path.display())));
    }
    let mut cfg = TrainConfig::load(path)?;
    for o in &g.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    resolve_cache(&mut cfg);
    cfg.validate()?;
    Ok(Some(cfg))
}

fn require_config(g: &GlobalArgs, command: &str) -> std::result::Result<TrainConfig, Failure> {
    effective_config(g)?.ok_or_else(|| Failure::Usage(format!("`{command}` needs --config PATH")))
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Precomputed masks without a directory are looked up in the cache.
fn resolve_cache(cfg: &mut TrainConfig) {
    if cfg.segmenter.kind == SegmenterKind::Precomputed && cfg.segmenter.precomputed.mask_dir.is_empty() {
        if let Some(dir) = cache_dir() {
            cfg.segmenter.precomputed.mask_dir = dir.join("masks").to_string_lossy().into_owned();
        }
    }
}

fn echo_config(dir: &Path, cfg: &TrainConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(CONFIG_ECHO);
    fs::write(&path, cfg.to_toml_string()?).map_err(io_err(&path))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(crate::error::json_err(path))?;
    fs::write(path, text).map_err(io_err(path))
}

fn print_json(value: &impl serde::Serialize) {
    if let Ok(text) = serde_json::to_string_pretty(value) {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{text}");
    }
}

fn dispatch(cli: &Cli) -> std::result::Result<(), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::GenData => {
            let cfg = require_config(g, "gen-data")?;
            let out = g.out.clone().ok_or_else(|| Failure::Usage("`gen-data` needs --out DIR".into()))?;
            let (train, val) = cfg.data.generate(&out)?;
            echo_config(&out, &cfg)?;
            println!("train: {} pairs -> {}", train.len(), train.path().display());
            if let Some(val) = val {
                println!("val:   {} pairs -> {}", val.len(), val.path().display());
            }
            Ok(())
        }
        Command::Segment { manifest, source } => {
            let cfg = require_config(g, "segment")?;
            let manifest = match manifest {
                Some(m) => m.clone(),
                None if !cfg.train_manifest.is_empty() => PathBuf::from(&cfg.train_manifest),
                None => return Err(Failure::Usage("`segment` needs --manifest or train_manifest in the config".into())),
            };
            let out = match (&g.out, cache_dir()) {
                (Some(o), _) => o.clone(),
                (None, Some(c)) => c.join("masks"),
                (None, None) => return Err(Failure::Usage(format!("`segment` needs --out DIR or {CACHE_ENV}"))),
            };
            if cfg.segmenter.kind == SegmenterKind::Precomputed {
                return Err(Failure::Usage("segmenter.kind = precomputed cannot produce masks".into()));
            }
            let manifest = load_manifest(&manifest)?;
            let segmenter = build_segmenter(&cfg.segmenter)?;
            let label = match source {
                Source::Lq => "lq",
                Source::Hq => "hq",
            };
            for entry in &manifest.entries {
                let sample = manifest.load_sample(entry)?;
                let img = if *source == Source::Lq { &sample.lq } else { &sample.hq };
                let masks = canonicalize(&segmenter.segment(&sample.id, img)?, cfg.segmenter.n_max)?;
                save_masks(&out, &sample.id, &masks, &format!("{}:{label}", segmenter.name())).map_err(Error::from)?;
            }
            echo_config(&out, &cfg)?;
            println!("{} mask sets -> {}", manifest.len(), out.display());
            Ok(())
        }
        Command::Train { audit, verbose } => {
            let cfg = require_config(g, "train")?;
            let out = g
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-seed{}", cfg.label(), cfg.seed)));
            let opts = RunOptions {
                out_dir: Some(out.clone()),
                student_only: false,
                audit: *audit,
                verbose: *verbose,
            };
            eprintln!("training ({}) for {} steps -> {}", cfg.label(), cfg.steps, out.display());
            let summary = train(&cfg, &opts)?;
            let last = summary.records.last().cloned();
            print_json(&serde_json::json!({
                "label": cfg.label(),
                "steps": summary.checkpoint.step,
                "val_psnr1": summary.val_psnr1,
                "val_psnr2": summary.val_psnr2,
                "last": last,
                "out": out,
            }));
            Ok(())
        }
        Command::Eval {
            checkpoint,
            which,
            manifest,
        } => {
            if g.config.is_some() || !g.overrides.is_empty() || g.seed.is_some() {
                return Err(Failure::Usage("`eval` takes its config from the checkpoint".into()));
            }
            let ckpt = Checkpoint::load(checkpoint)?;
            let manifest = match manifest {
                Some(m) => m.clone(),
                None if !ckpt.config.val_manifest.is_empty() => PathBuf::from(&ckpt.config.val_manifest),
                None => return Err(Failure::Usage("`eval` needs --manifest or val_manifest in the checkpoint config".into())),
            };
            let samples = load_manifest(&manifest)?.load_samples()?;
            let report = evaluate(&ckpt, &samples, (*which).into())?;
            if let Some(out) = &g.out {
                echo_config(out, &ckpt.config)?;
                write_json(&out.join("eval.json"), &report)?;
            }
            print_json(&report);
            Ok(())
        }
        Command::Verify {
            experiment,
            seeds,
            workers,
        } => {
            let mut outcomes = offline_suite();
            for o in &outcomes {
                println!("{}", o.line());
            }
            if *experiment {
                let base = effective_config(g)?.unwrap_or_default();
                let mut exp = ExperimentConfig::new(base, seeds.clone());
                exp.workers = *workers;
                exp.verbose = true;
                exp.out_root = g.out.clone();
                exp.data_root = g.out.as_ref().map(|o| o.join("data"));
                let report = run_experiment(&exp)?;
                if let Some(out) = &g.out {
                    echo_config(out, &exp.base)?;
                    write_json(&out.join("experiment.json"), &report)?;
                }
                let o = distillation_gain(&report);
                println!("{}", o.line());
                outcomes.push(o);
            }
            let passed = outcomes.iter().filter(|o| o.passed).count();
            println!("{passed}/{} checks passed", outcomes.len());
            if outcomes.iter().all(|o| o.passed) {
                Ok(())
            } else {
                Err(Failure::Checks)
            }
        }
    }
}
