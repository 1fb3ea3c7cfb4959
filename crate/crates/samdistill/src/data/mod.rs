//! Paired low/high-quality datasets built from synthetic degradations.

mod degrade;
mod procedural;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use samdistill_core::{io, psnr, ImageTensor};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, Error, Result};

pub use degrade::{add_gaussian_noise, add_rain_streaks, degrade, gaussian_blur, Degradation, DegradationSpec};
pub use procedural::{procedural_bases, procedural_image, sub_seed};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// One (degraded, clean) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub lq: ImageTensor,
    pub hq: ImageTensor,
}

impl PairedSample {
    pub fn new(id: impl Into<String>, lq: ImageTensor, hq: ImageTensor) -> Result<Self> {
        lq.ensure_same_shape(&hq)?;
        Ok(Self { id: id.into(), lq, hq })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Dataset(format!("unknown split {other:?} (train, val, test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub lq_path: PathBuf,
    pub hq_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr_db: Option<f64>,
}

/// Index of a generated dataset. Entry paths are relative to `root`, the
/// directory holding the manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub split: Split,
    pub spec: DegradationSpec,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks version, id uniqueness and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Dataset(format!("unsupported manifest version {}", self.version)));
        }
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Dataset(format!("duplicate sample id {:?}", e.id)));
            }
            for p in [&e.lq_path, &e.hq_path] {
                let full = self.root.join(p);
                if !full.is_file() {
                    return Err(Error::Dataset(format!("missing file {}", full.display())));
                }
            }
        }
        Ok(())
    }

    pub fn load_sample(&self, entry: &ManifestEntry) -> Result<PairedSample> {
        let lq = io::load_png(&self.root.join(&entry.lq_path))?;
        let hq = io::load_png(&self.root.join(&entry.hq_path))?;
        PairedSample::new(entry.id.clone(), lq, hq)
    }

    pub fn load_samples(&self) -> Result<Vec<PairedSample>> {
        self.entries.iter().map(|e| self.load_sample(e)).collect()
    }
}

/// Reads a manifest from a file or from a directory containing `manifest.json`.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(io_err(&file))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text).map_err(json_err(&file))?;
    manifest.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.validate()?;
    Ok(manifest)
}

fn write_manifest(manifest: &DatasetManifest) -> Result<()> {
    let path = manifest.path();
    let text = serde_json::to_string_pretty(manifest).map_err(json_err(&path))?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))
}

/// Degrades base image `i % len` with a per-sample seed derived from
/// `spec.seed`, for `i` in `0..count`, and writes 16-bit PNG pairs under
/// `out_root/{lq,hq}` plus `out_root/manifest.json`.
pub fn generate_dataset(
    base_images: &[ImageTensor],
    spec: &DegradationSpec,
    count: usize,
    out_root: &Path,
    split: Split,
) -> Result<DatasetManifest> {
    if base_images.is_empty() {
        return Err(Error::Dataset("empty base image set".into()));
    }
    if count == 0 {
        return Err(Error::Dataset("count must be at least 1".into()));
    }
    spec.validate()?;
    for dir in ["lq", "hq"] {
        let d = out_root.join(dir);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }

    let make = |i: usize| -> Result<ManifestEntry> {
        let (id, lq, hq) = degraded_pair(base_images, spec, i, split)?;
        let entry = ManifestEntry {
            lq_path: PathBuf::from("lq").join(format!("{id}.png")),
            hq_path: PathBuf::from("hq").join(format!("{id}.png")),
            psnr_db: Some(psnr(&lq, hq)?),
            id,
        };
        io::save_png(&out_root.join(&entry.lq_path), &lq, 16)?;
        io::save_png(&out_root.join(&entry.hq_path), hq, 16)?;
        Ok(entry)
    };

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(count);
    let mut slots: Vec<Option<Result<ManifestEntry>>> = (0..count).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunk = count.div_ceil(workers);
        for (w, part) in slots.chunks_mut(chunk).enumerate() {
            let make = &make;
            s.spawn(move || {
                for (j, slot) in part.iter_mut().enumerate() {
                    *slot = Some(make(w * chunk + j));
                }
            });
        }
    });
    let entries = slots
        .into_iter()
        .map(|s| s.expect("every slot is filled"))
        .collect::<Result<Vec<_>>>()?;

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        split,
        spec: spec.clone(),
        entries,
        root: out_root.to_path_buf(),
    };
    write_manifest(&manifest)?;
    Ok(manifest)
}

fn degraded_pair<'a>(
    base_images: &'a [ImageTensor],
    spec: &DegradationSpec,
    i: usize,
    split: Split,
) -> Result<(String, ImageTensor, &'a ImageTensor)> {
    let id = format!("{}_{i:05}", split.as_str());
    let hq = &base_images[i % base_images.len()];
    let lq = degrade(hq, &spec.with_seed(sub_seed(spec.seed, i as u64)))?;
    Ok((id, lq, hq))
}

/// In-memory counterpart of [`generate_dataset`]: the same pairs, without
/// the PNG round trip.
pub fn synthesize_pairs(
    base_images: &[ImageTensor],
    spec: &DegradationSpec,
    count: usize,
    split: Split,
) -> Result<Vec<PairedSample>> {
    if base_images.is_empty() {
        return Err(Error::Dataset("empty base image set".into()));
    }
    spec.validate()?;
    (0..count)
        .map(|i| {
            let (id, lq, hq) = degraded_pair(base_images, spec, i, split)?;
            PairedSample::new(id, lq, hq.clone())
        })
        .collect()
}

/// Every `*.png` directly inside `dir`, in file-name order, as RGB.
pub fn load_clean_folder(dir: &Path) -> Result<Vec<ImageTensor>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no PNG images in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let img = io::load_png(p)?;
            if img.channels() == 3 {
                return Ok(img);
            }
            let plane = img.plane(0);
            let w = img.width();
            Ok(ImageTensor::from_fn(3, img.height(), w, |_, y, x| plane[y * w + x])?)
        })
        .collect()
}
