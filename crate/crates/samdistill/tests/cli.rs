use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use samdistill::train::{Precision, TrainConfig};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_samdistill"));
    c.env_remove("SAMDISTILL_CACHE");
    c
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().expect("spawn samdistill");
    (
        status.code().expect("exit code"),
        String::from_utf8_lossy(&stdout).into_owned(),
        String::from_utf8_lossy(&stderr).into_owned(),
    )
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = TrainConfig::default();
        cfg.precision = Precision::F32;
        cfg.batch_size = 2;
        cfg.steps = 3;
        cfg.log_every = 1;
        cfg.baseline.channels = 8;
        cfg.refiner.channels = 8;
        cfg.refiner.spf.hidden_channels = 8;
        cfg.data.train_count = 4;
        cfg.data.val_count = 2;
        cfg.data.height = 24;
        cfg.data.width = 24;
        std::fs::write(dir.path().join("cfg.toml"), cfg.to_toml_string().unwrap()).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn arg(&self, rel: &str) -> String {
        self.path(rel).to_string_lossy().into_owned()
    }

    fn gen_data(&self) {
        let (code, out, err) = run(bin().args(["gen-data", "--config", &self.arg("cfg.toml"), "--out", &self.arg("data")]));
        assert_eq!(code, 0, "{out}{err}");
        assert!(self.path("data/train/manifest.json").is_file());
        assert!(self.path("data/val/manifest.json").is_file());
    }

    fn manifests(&self) -> [String; 4] {
        [
            "--override".into(),
            format!("train_manifest={}", self.arg("data/train/manifest.json")),
            "--override".into(),
            format!("val_manifest={}", self.arg("data/val/manifest.json")),
        ]
    }
}

fn log_labels(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["label"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn missing_config_is_a_usage_error() {
    let (code, _, err) = run(bin().arg("train"));
    assert_eq!(code, 1);
    assert!(err.contains("--config") && err.contains("Usage"), "{err}");

    let (code, _, err) = run(bin().args(["train", "--config", "/definitely/not/here.toml"]));
    assert_eq!(code, 1);
    assert!(err.contains("not found"), "{err}");

    let (code, _, _) = run(bin().arg("frobnicate"));
    assert_eq!(code, 1);
}

#[test]
fn unknown_override_lists_valid_keys() {
    let ws = Workspace::new();
    let (code, _, err) = run(bin().args(["train", "--config", &ws.arg("cfg.toml"), "--override", "lamda1=0.1"]));
    assert_eq!(code, 1);
    assert!(err.contains("valid keys"), "{err}");
    assert!(err.contains("lambda1") && err.contains("refiner.n_blocks"), "{err}");
}

#[test]
fn pipeline_end_to_end() {
    let ws = Workspace::new();
    ws.gen_data();
    assert!(ws.path("data/config.toml").is_file());

    let mut train = bin();
    train
        .args(["train", "--config", &ws.arg("cfg.toml"), "--seed", "5", "--out", &ws.arg("run")])
        .args(ws.manifests());
    let (code, out, err) = run(&mut train);
    assert_eq!(code, 0, "{out}{err}");
    let summary: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["label"], "distilled");
    assert_eq!(summary["steps"], 3);
    assert!(summary["val_psnr1"].as_f64().unwrap().is_finite());

    let echoed = TrainConfig::load(&ws.path("run/config.toml")).unwrap();
    assert_eq!(echoed.seed, 5);
    assert!(echoed.train_manifest.ends_with("manifest.json"));
    assert_eq!(log_labels(&ws.path("run/train_log.jsonl")), vec!["distilled"; 3]);

    let ckpt = ws.arg("run/checkpoints/final.ckpt");
    let (code, out, err) = run(bin().args(["eval", "--checkpoint", &ckpt, "--which", "student", "--out", &ws.arg("eval")]));
    assert_eq!(code, 0, "{out}{err}");
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["which"], "student");
    assert_eq!(report["samples"], 2);
    for counter in ["segmenter_calls", "refiner_forwards", "perceptual_builds"] {
        assert_eq!(report["counters"][counter], 0, "{counter}");
    }
    let written: Value = serde_json::from_str(&std::fs::read_to_string(ws.path("eval/eval.json")).unwrap()).unwrap();
    assert_eq!(written, report);
    assert!(ws.path("eval/config.toml").is_file());

    let (code, out, err) = run(bin().args(["eval", "--checkpoint", &ckpt, "--which", "teacher"]));
    assert_eq!(code, 0, "{out}{err}");
    let report: Value = serde_json::from_str(&out).unwrap();
    assert!(report["counters"]["segmenter_calls"].as_u64().unwrap() > 0);
    assert!(report["counters"]["refiner_forwards"].as_u64().unwrap() > 0);

    let (code, _, err) = run(bin().args(["eval", "--checkpoint", &ws.arg("run/missing.ckpt")]));
    assert_eq!(code, 1, "{err}");
}

#[test]
fn zero_lambdas_are_labeled_baseline_only() {
    let ws = Workspace::new();
    ws.gen_data();
    let mut train = bin();
    train
        .args(["train", "--config", &ws.arg("cfg.toml"), "--out", &ws.arg("run")])
        .args(["--override", "lambda1=0", "--override", "lambda2=0"])
        .args(ws.manifests());
    let (code, out, err) = run(&mut train);
    assert_eq!(code, 0, "{out}{err}");
    assert_eq!(log_labels(&ws.path("run/train_log.jsonl")), vec!["baseline-only"; 3]);
    let echoed = TrainConfig::load(&ws.path("run/config.toml")).unwrap();
    assert_eq!((echoed.lambda1, echoed.lambda2), (0.0, 0.0));
}

#[test]
fn segment_fills_the_cache_and_training_reads_it() {
    let ws = Workspace::new();
    ws.gen_data();
    let cache = ws.path("cache");
    let (code, out, err) = run(bin()
        .env("SAMDISTILL_CACHE", &cache)
        .args(["segment", "--config", &ws.arg("cfg.toml"), "--manifest", &ws.arg("data/train/manifest.json")]));
    assert_eq!(code, 0, "{out}{err}");
    let jsons = std::fs::read_dir(cache.join("masks"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "json"))
        .count();
    assert!(jsons >= 4, "{jsons} mask manifests");

    let mut train = bin();
    train
        .env("SAMDISTILL_CACHE", &cache)
        .args(["train", "--config", &ws.arg("cfg.toml"), "--out", &ws.arg("run")])
        .args(["--override", "segmenter.kind=precomputed", "--override", "val_manifest="])
        .args(ws.manifests()[..2].iter());
    let (code, out, err) = run(&mut train);
    assert_eq!(code, 0, "{out}{err}");
    let echoed = TrainConfig::load(&ws.path("run/config.toml")).unwrap();
    assert_eq!(echoed.segmenter.precomputed.mask_dir, cache.join("masks").to_string_lossy());

    let (code, _, err) = run(bin().args(["segment", "--config", &ws.arg("cfg.toml"), "--manifest", &ws.arg("data/train/manifest.json")]));
    assert_eq!(code, 1, "{err}");
}
