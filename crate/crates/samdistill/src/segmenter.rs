//! Mask sources standing in for an automatic-mode segmentation model.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use samdistill_core::{io, ImageTensor, MaskSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterKind {
    Grid,
    Luminance,
    Precomputed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridParams {
    fn default() -> Self {
        Self { rows: 2, cols: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LuminanceParams {
    pub n_bins: usize,
}

impl Default for LuminanceParams {
    fn default() -> Self {
        Self { n_bins: 4 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecomputedParams {
    /// Directory of `<id>.mask.png` / `<id>.mask.json` files.
    pub mask_dir: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub kind: SegmenterKind,
    pub grid: GridParams,
    pub luminance: LuminanceParams,
    pub precomputed: PrecomputedParams,
    /// Cap on the mask count after canonicalization.
    pub n_max: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            kind: SegmenterKind::Luminance,
            grid: GridParams::default(),
            luminance: LuminanceParams::default(),
            precomputed: PrecomputedParams::default(),
            n_max: 8,
        }
    }
}

impl SegmenterConfig {
    pub fn grid(rows: usize, cols: usize, n_max: usize) -> Self {
        Self {
            kind: SegmenterKind::Grid,
            grid: GridParams { rows, cols },
            n_max,
            ..Self::default()
        }
    }

    pub fn luminance(n_bins: usize, n_max: usize) -> Self {
        Self {
            kind: SegmenterKind::Luminance,
            luminance: LuminanceParams { n_bins },
            n_max,
            ..Self::default()
        }
    }

    pub fn precomputed(mask_dir: impl Into<String>, n_max: usize) -> Self {
        Self {
            kind: SegmenterKind::Precomputed,
            precomputed: PrecomputedParams { mask_dir: mask_dir.into() },
            n_max,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_max < 2 {
            return bad(format!("segmenter.n_max must be >= 2, got {}", self.n_max));
        }
        match self.kind {
            SegmenterKind::Grid => {
                let GridParams { rows, cols } = self.grid;
                if rows == 0 || cols == 0 {
                    return bad(format!("segmenter grid {rows}x{cols} must have rows, cols >= 1"));
                }
                if rows * cols > self.n_max {
                    return bad(format!(
                        "segmenter grid {rows}x{cols} has more cells than n_max = {}",
                        self.n_max
                    ));
                }
            }
            SegmenterKind::Luminance => {
                if self.luminance.n_bins < 2 {
                    return bad(format!("segmenter.luminance.n_bins must be >= 2, got {}", self.luminance.n_bins));
                }
            }
            SegmenterKind::Precomputed => {
                if self.precomputed.mask_dir.is_empty() {
                    return bad("segmenter.precomputed.mask_dir is required for the precomputed kind".into());
                }
            }
        }
        Ok(())
    }
}

/// Produces the masks for an image. `id` identifies the sample for sources
/// that look masks up rather than computing them.
pub trait Segmenter: Send + Sync {
    fn name(&self) -> &'static str;
    fn segment(&self, id: &str, img: &ImageTensor) -> Result<MaskSet>;
}

/// Non-overlapping `rows x cols` tiling; cell boundaries at `i * H / rows`.
#[derive(Clone, Debug)]
pub struct GridSegmenter {
    rows: usize,
    cols: usize,
}

impl GridSegmenter {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }
}

impl Segmenter for GridSegmenter {
    fn name(&self) -> &'static str {
        "grid"
    }

    fn segment(&self, _id: &str, img: &ImageTensor) -> Result<MaskSet> {
        instrument::segmenter_called();
        let (h, w) = (img.height(), img.width());
        if self.rows > h || self.cols > w {
            return Err(Error::Segment(format!(
                "grid {}x{} finer than image {h}x{w}",
                self.rows, self.cols
            )));
        }
        let row_of: Vec<usize> = (0..h).map(|y| y * self.rows / h).collect();
        let col_of: Vec<usize> = (0..w).map(|x| x * self.cols / w).collect();
        let n = self.rows * self.cols;
        let mut data = vec![0u8; n * h * w];
        for y in 0..h {
            for x in 0..w {
                let k = row_of[y] * self.cols + col_of[x];
                data[k * h * w + y * w + x] = 1;
            }
        }
        Ok(MaskSet::new(data, n, h, w)?)
    }
}

/// Quantile bins of per-pixel luminance.
///
/// Thresholds are `t_k = sorted[floor(k * len / n_bins)]` for `k` in
/// `1..n_bins`; a pixel with luminance `v` falls in bin `#{k : t_k <= v}`.
/// Bins left empty by ties are dropped.
#[derive(Clone, Debug)]
pub struct LuminanceSegmenter {
    n_bins: usize,
}

impl LuminanceSegmenter {
    pub fn new(n_bins: usize) -> Self {
        Self { n_bins }
    }
}

impl Segmenter for LuminanceSegmenter {
    fn name(&self) -> &'static str {
        "luminance"
    }

    fn segment(&self, _id: &str, img: &ImageTensor) -> Result<MaskSet> {
        instrument::segmenter_called();
        let (h, w) = (img.height(), img.width());
        let lum = img.luminance();
        let mut sorted = lum.clone();
        sorted.sort_by(f64::total_cmp);
        let thresholds: Vec<f64> = (1..self.n_bins).map(|k| sorted[k * sorted.len() / self.n_bins]).collect();
        let mut bins = vec![vec![0u8; h * w]; self.n_bins];
        for (p, &v) in lum.iter().enumerate() {
            let b = thresholds.iter().filter(|&&t| t <= v).count();
            bins[b][p] = 1;
        }
        bins.retain(|m| m.contains(&1));
        Ok(MaskSet::from_channels(&bins, h, w)?)
    }
}

/// Masks stored on disk per image id, cached after the first load.
#[derive(Debug)]
pub struct PrecomputedSegmenter {
    dir: PathBuf,
    cache: Mutex<HashMap<String, Arc<MaskSet>>>,
}

impl PrecomputedSegmenter {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl Segmenter for PrecomputedSegmenter {
    fn name(&self) -> &'static str {
        "precomputed"
    }

    fn segment(&self, id: &str, img: &ImageTensor) -> Result<MaskSet> {
        instrument::segmenter_called();
        let cached = self.cache.lock().expect("mask cache poisoned").get(id).cloned();
        let masks = match cached {
            Some(m) => m,
            None => {
                let m = Arc::new(io::load_masks(&self.dir, id)?);
                self.cache
                    .lock()
                    .expect("mask cache poisoned")
                    .insert(id.to_string(), Arc::clone(&m));
                m
            }
        };
        if (masks.height(), masks.width()) != (img.height(), img.width()) {
            return Err(Error::Segment(format!(
                "masks for {id:?} are {}x{}, image is {}x{}",
                masks.height(),
                masks.width(),
                img.height(),
                img.width()
            )));
        }
        Ok((*masks).clone())
    }
}

pub fn build_segmenter(cfg: &SegmenterConfig) -> Result<Box<dyn Segmenter>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        SegmenterKind::Grid => Box::new(GridSegmenter::new(cfg.grid.rows, cfg.grid.cols)),
        SegmenterKind::Luminance => Box::new(LuminanceSegmenter::new(cfg.luminance.n_bins)),
        SegmenterKind::Precomputed => Box::new(PrecomputedSegmenter::new(&cfg.precomputed.mask_dir)),
    })
}

/// One-shot segmentation with a freshly built segmenter.
pub fn segment(id: &str, img: &ImageTensor, cfg: &SegmenterConfig) -> Result<MaskSet> {
    build_segmenter(cfg)?.segment(id, img)
}

/// Drops empty masks, orders by area (largest first, ties by first set
/// pixel in raster order) and keeps at most `n_max`.
pub fn canonicalize(masks: &MaskSet, n_max: usize) -> Result<MaskSet> {
    if n_max < 2 {
        return Err(Error::Segment(format!("n_max must be >= 2, got {n_max}")));
    }
    let mut order: Vec<(usize, usize, usize)> = (0..masks.n())
        .filter_map(|k| masks.first_set_pixel(k).map(|first| (masks.areas()[k], first, k)))
        .collect();
    if order.is_empty() {
        return Err(Error::Segment("every mask is empty".into()));
    }
    order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    order.truncate(n_max);
    let channels: Vec<Vec<u8>> = order.iter().map(|&(_, _, k)| masks.channel(k).to_vec()).collect();
    Ok(MaskSet::from_channels(&channels, masks.height(), masks.width())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::Counters;
    use proptest::prelude::*;

    fn noise_image(seed: u64) -> ImageTensor {
        crate::data::procedural_image(seed, 3, 32, 32).unwrap()
    }

    #[test]
    fn grid_two_by_two() {
        let img = ImageTensor::filled(3, 64, 64, 0.2).unwrap();
        let m = GridSegmenter::new(2, 2).segment("x", &img).unwrap();
        assert_eq!(m.n(), 4);
        assert_eq!(m.areas(), &[1024; 4]);
        assert!(m.is_disjoint());
        assert_eq!(m.channel(0)[31 * 64 + 31], 1);
        assert_eq!(m.channel(3)[32 * 64 + 32], 1);
    }

    #[test]
    fn luminance_two_valued_split() {
        let img = ImageTensor::from_fn(3, 16, 16, |_, _, x| if x < 8 { 0.0 } else { 1.0 }).unwrap();
        let m = LuminanceSegmenter::new(2).segment("x", &img).unwrap();
        assert_eq!(m.n(), 2);
        assert_eq!(m.areas(), &[128, 128]);
        assert_eq!(m.channel(0)[0], 1);
        assert_eq!(m.channel(1)[15], 1);
    }

    #[test]
    fn luminance_constant_collapses() {
        let img = ImageTensor::filled(3, 16, 16, 0.4).unwrap();
        let m = LuminanceSegmenter::new(4).segment("x", &img).unwrap();
        assert_eq!(m, MaskSet::full(16, 16));
    }

    #[test]
    fn canonicalize_hand_sorted() {
        let (h, w) = (4, 4);
        let areas = [5usize, 9, 9, 1, 0, 3];
        let mut chans = Vec::new();
        for (k, &a) in areas.iter().enumerate() {
            let mut m = vec![0u8; h * w];
            // Mask 2 starts before mask 1 in raster order.
            let start = if k == 2 { 0 } else { 16 - a };
            for p in start..start + a {
                m[p] = 1;
            }
            chans.push(m);
        }
        let set = MaskSet::from_channels(&chans, h, w).unwrap();
        let out = canonicalize(&set, 4).unwrap();
        assert_eq!(out.areas(), &[9, 9, 5, 3]);
        assert_eq!(out.channel(0), chans[2].as_slice());
        assert_eq!(out.channel(1), chans[1].as_slice());
    }

    #[test]
    fn canonicalize_fixed_point_and_errors() {
        let m = GridSegmenter::new(2, 2).segment("x", &noise_image(1)).unwrap();
        assert_eq!(canonicalize(&m, 8).unwrap(), m);
        let empty = MaskSet::new(vec![0; 2 * 64], 2, 8, 8).unwrap();
        assert!(canonicalize(&empty, 4).is_err());
        assert!(canonicalize(&m, 1).is_err());
    }

    #[test]
    fn precomputed_round_trip_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let img = noise_image(2);
        let masks = LuminanceSegmenter::new(3).segment("a", &img).unwrap();
        io::save_masks(dir.path(), "a", &masks, "test").unwrap();
        let seg = build_segmenter(&SegmenterConfig::precomputed(dir.path().to_str().unwrap(), 8)).unwrap();
        assert_eq!(seg.segment("a", &img).unwrap(), masks);
        assert_eq!(seg.segment("a", &img).unwrap(), masks);
        let err = seg.segment("b", &img).unwrap_err();
        assert!(matches!(err, Error::Core(samdistill_core::CoreError::MissingMask { .. })));
        let small = ImageTensor::filled(3, 16, 16, 0.1).unwrap();
        assert!(seg.segment("a", &small).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SegmenterConfig::grid(3, 3, 8).validate().is_err());
        assert!(SegmenterConfig::grid(0, 2, 8).validate().is_err());
        assert!(SegmenterConfig::luminance(1, 8).validate().is_err());
        assert!(SegmenterConfig::luminance(4, 1).validate().is_err());
        assert!(SegmenterConfig::precomputed("", 8).validate().is_err());
        assert!(SegmenterConfig::default().validate().is_ok());
    }

    #[test]
    fn calls_are_counted() {
        let before = Counters::now();
        segment("x", &noise_image(3), &SegmenterConfig::default()).unwrap();
        assert_eq!(Counters::since(before).segmenter_calls, 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn grid_partitions_exactly(rows in 1usize..5, cols in 1usize..5, seed in 0u64..100) {
            let img = noise_image(seed);
            let m = GridSegmenter::new(rows, cols).segment("x", &img).unwrap();
            prop_assert_eq!(m.n(), rows * cols);
            for p in 0..32 * 32 {
                prop_assert_eq!(m.channels().map(|c| c[p] as u32).sum::<u32>(), 1);
            }
        }

        #[test]
        fn segment_then_canonicalize(seed in 0u64..1000, n_bins in 2usize..10, n_max in 2usize..8) {
            let img = noise_image(seed);
            let m = LuminanceSegmenter::new(n_bins).segment("x", &img).unwrap();
            prop_assert!(m.n() >= 1 && m.is_disjoint());
            let c = canonicalize(&m, n_max).unwrap();
            prop_assert!(c.n() >= 1 && c.n() <= n_max);
            prop_assert!(c.areas().windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(canonicalize(&c, n_max).unwrap(), c);
        }
    }
}
