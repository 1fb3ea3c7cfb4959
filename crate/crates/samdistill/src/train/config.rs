use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use samdistill_core::ImageTensor;

use crate::data::{
    generate_dataset, load_clean_folder, procedural_bases, sub_seed, synthesize_pairs, DatasetManifest, DegradationSpec,
    PairedSample, Split,
};
use crate::distill::{PerceptualConfig, RelationVectors};
use crate::error::{io_err, Error, Result};
use crate::models::{BaselineIRConfig, RefinerConfig};
use crate::segmenter::SegmenterConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

/// Dataset generation settings used by `gen-data`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub degradation: DegradationSpec,
    pub train_count: usize,
    pub val_count: usize,
    pub height: usize,
    pub width: usize,
    /// Seed of the procedural clean images.
    pub base_seed: u64,
    /// Folder of clean PNGs to use instead of procedural images; empty means unset.
    pub clean_dir: String,
}

impl DataConfig {
    /// Clean images for the train and validation splits. Procedural bases
    /// come from disjoint seeds; a clean folder gives its last sixth to
    /// validation.
    pub fn bases(&self) -> Result<(Vec<ImageTensor>, Vec<ImageTensor>)> {
        if self.train_count == 0 {
            return Err(Error::Config("data.train_count must be at least 1".into()));
        }
        if !self.clean_dir.is_empty() {
            let mut all = load_clean_folder(Path::new(&self.clean_dir))?;
            if all.len() < 2 {
                return Ok((all.clone(), all));
            }
            let val = all.split_off(all.len() - (all.len() / 6).max(1));
            return Ok((all, val));
        }
        let train = procedural_bases(self.train_count, self.base_seed, self.height, self.width)?;
        let val = procedural_bases(self.val_count.max(1), sub_seed(self.base_seed, 1 << 40), self.height, self.width)?;
        Ok((train, val))
    }

    /// Degradation of a split; validation pairs get their own seed stream.
    pub fn spec_for(&self, split: Split) -> DegradationSpec {
        match split {
            Split::Train => self.degradation.clone(),
            Split::Val => self.degradation.with_seed(sub_seed(self.degradation.seed, 1 << 40)),
            Split::Test => self.degradation.with_seed(sub_seed(self.degradation.seed, 2 << 40)),
        }
    }

    /// Writes `root/train` and, when `val_count > 0`, `root/val`.
    pub fn generate(&self, root: &Path) -> Result<(DatasetManifest, Option<DatasetManifest>)> {
        let (train_bases, val_bases) = self.bases()?;
        let train = generate_dataset(&train_bases, &self.spec_for(Split::Train), self.train_count, &root.join("train"), Split::Train)?;
        let val = if self.val_count > 0 {
            Some(generate_dataset(&val_bases, &self.spec_for(Split::Val), self.val_count, &root.join("val"), Split::Val)?)
        } else {
            None
        };
        Ok((train, val))
    }

    /// The pairs [`DataConfig::generate`] would write, kept in memory.
    pub fn synthesize(&self) -> Result<(Vec<PairedSample>, Vec<PairedSample>)> {
        let (train_bases, val_bases) = self.bases()?;
        Ok((
            synthesize_pairs(&train_bases, &self.spec_for(Split::Train), self.train_count, Split::Train)?,
            synthesize_pairs(&val_bases, &self.spec_for(Split::Val), self.val_count, Split::Val)?,
        ))
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            degradation: DegradationSpec::rain(60, 14.0, 10.0, 0.6, 1),
            train_count: 200,
            val_count: 32,
            height: 64,
            width: 64,
            base_seed: 0,
            clean_dir: String::new(),
        }
    }
}

/// Everything a training run depends on. Empty strings mean "unset".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub train_manifest: String,
    pub val_manifest: String,
    pub lambda1: f64,
    pub lambda2: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Feed the refiner a detached copy of the baseline output.
    pub detach_cascade_input: bool,
    pub precision: Precision,
    pub checkpoint_dir: String,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub log_every: usize,
    /// 0 validates only at the end.
    pub val_every: usize,
    /// Recompute masks every this many steps; 1 means every step.
    pub mask_refresh_interval: usize,
    /// How masked features are turned into vectors for the relation matrix.
    pub relation_vectors: RelationVectors,
    pub optimizer: OptimizerConfig,
    pub baseline: BaselineIRConfig,
    pub refiner: RefinerConfig,
    pub segmenter: SegmenterConfig,
    pub perceptual: PerceptualConfig,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            train_manifest: String::new(),
            val_manifest: String::new(),
            lambda1: 0.005,
            lambda2: 200.0,
            batch_size: 8,
            steps: 2000,
            seed: 0,
            detach_cascade_input: true,
            precision: Precision::F32,
            checkpoint_dir: String::new(),
            checkpoint_every: 0,
            log_every: 50,
            val_every: 500,
            mask_refresh_interval: 1,
            relation_vectors: RelationVectors::Flatten,
            optimizer: OptimizerConfig::default(),
            baseline: BaselineIRConfig::default(),
            refiner: RefinerConfig::default(),
            segmenter: SegmenterConfig::default(),
            perceptual: PerceptualConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Run label: "baseline-only" when both distillation weights are zero.
    pub fn label(&self) -> &'static str {
        if self.lambda1 == 0.0 && self.lambda2 == 0.0 {
            "baseline-only"
        } else {
            "distilled"
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return bad(format!("optimizer.lr must be > 0, got {}", o.lr));
        }
        for (name, b) in [("beta1", o.beta1), ("beta2", o.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("optimizer.{name} must be in [0, 1), got {b}"));
            }
        }
        if !(o.eps > 0.0) {
            return bad(format!("optimizer.eps must be > 0, got {}", o.eps));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1".into());
        }
        if self.mask_refresh_interval == 0 {
            return bad("mask_refresh_interval must be >= 1".into());
        }
        if self.refiner.mask_channels != self.segmenter.n_max {
            return bad(format!(
                "refiner.mask_channels ({}) must equal segmenter.n_max ({})",
                self.refiner.mask_channels, self.segmenter.n_max
            ));
        }
        self.baseline.validate()?;
        self.refiner.validate()?;
        self.segmenter.validate()?;
        self.perceptual.validate()?;
        self.data.degradation.validate()?;
        Ok(())
    }

    /// Applies a dotted `key=value` override. The value is parsed as a TOML
    /// literal, falling back to a plain string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not KEY=VALUE")))?;
        let key = key.trim();
        let valid = valid_keys();
        if !valid.contains(key) {
            let list: Vec<&str> = valid.iter().map(String::as_str).collect();
            return Err(Error::Config(format!(
                "unknown key {key:?}; valid keys: {}",
                list.join(", ")
            )));
        }
        let value = parse_value(raw.trim());
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("{key}: {p} is not a table")))?;
            node = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        node.as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: parent is not a table")))?
            .insert(parts[parts.len() - 1].to_string(), value);
        if let Some(deg) = root.get_mut("data").and_then(|d| d.get_mut("degradation")) {
            prune_degradation(deg);
        }
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override {key}: {e}")))?;
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

const DEGRADATION_FIELDS: [(&str, &[&str]); 3] = [
    ("rain", &["streak_count", "length", "angle_deg", "intensity"]),
    ("blur", &["sigma", "kernel_size"]),
    ("noise", &["sigma"]),
];

/// After switching `kind`, drops parameters the new kind does not have and
/// fills in defaults for the ones it lacks.
fn prune_degradation(deg: &mut toml::Value) {
    let Some(t) = deg.as_table_mut() else { return };
    let kind = t.get("kind").and_then(|k| k.as_str()).unwrap_or("").to_string();
    let Some((_, keep)) = DEGRADATION_FIELDS.iter().find(|(k, _)| *k == kind) else {
        return;
    };
    t.retain(|k, _| k == "kind" || k == "seed" || keep.contains(&k));
    let defaults = match kind.as_str() {
        "rain" => DegradationSpec::rain(60, 14.0, 10.0, 0.6, 0),
        "blur" => DegradationSpec::blur(1.5, 7, 0),
        _ => DegradationSpec::noise(0.1, 0),
    };
    if let Ok(toml::Value::Table(d)) = toml::Value::try_from(defaults) {
        for (k, v) in d {
            t.entry(k).or_insert(v);
        }
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeSet<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => {
            out.insert(prefix.to_string());
        }
    }
}

/// Every dotted key a config file or override may set.
pub fn valid_keys() -> BTreeSet<String> {
    let mut keys = BTreeSet::new();
    let cfg = toml::Value::try_from(TrainConfig::default()).expect("default config serializes");
    flatten("", &cfg, &mut keys);
    for (_, fields) in DEGRADATION_FIELDS {
        for f in fields {
            keys.insert(format!("data.degradation.{f}"));
        }
    }
    keys
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(TrainConfig::from_toml_str("").unwrap(), cfg);
        assert_eq!(cfg.label(), "distilled");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(TrainConfig::from_toml_str("lambda3 = 1.0").is_err());
        assert!(TrainConfig::from_toml_str("[refiner]\nwidth = 3").is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = TrainConfig::default();
        cfg.apply_override("lambda1=0").unwrap();
        cfg.apply_override("lambda2 = 0").unwrap();
        assert_eq!(cfg.label(), "baseline-only");
        cfg.apply_override("refiner.spf.attention=false").unwrap();
        assert!(!cfg.refiner.spf.attention);
        cfg.apply_override("segmenter.kind=grid").unwrap();
        assert_eq!(cfg.segmenter.kind, crate::segmenter::SegmenterKind::Grid);
        cfg.apply_override("train_manifest=data/train").unwrap();
        assert_eq!(cfg.train_manifest, "data/train");
        cfg.apply_override("precision=f64").unwrap();
        assert_eq!(cfg.precision, Precision::F64);

        let err = cfg.apply_override("refiner.width=3").unwrap_err().to_string();
        assert!(err.contains("valid keys") && err.contains("refiner.channels"));
        assert!(cfg.apply_override("steps=many").is_err());
        assert!(cfg.apply_override("steps").is_err());
    }

    #[test]
    fn switching_degradation_kind() {
        let mut cfg = TrainConfig::default();
        cfg.apply_override("data.degradation.kind=blur").unwrap();
        cfg.apply_override("data.degradation.sigma=1.5").unwrap();
        cfg.apply_override("data.degradation.kernel_size=7").unwrap();
        assert_eq!(cfg.data.degradation, DegradationSpec::blur(1.5, 7, 1));
    }

    #[test]
    fn validation() {
        let mut cfg = TrainConfig::default();
        cfg.lambda1 = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.optimizer.lr = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.segmenter.n_max = 4;
        assert!(cfg.validate().is_err());
    }
}
