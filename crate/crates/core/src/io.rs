//! PNG images and on-disk mask sets.
//!
//! Images decode to `[0, 1]` by dividing by `2^bits - 1` (8- or 16-bit).
//!
//! A mask set for image `id` lives in two files inside a directory:
//!
//! * `<id>.mask.png`: either a 16-bit grayscale label map, where pixel
//!   value `k` in `1..=N` marks membership in mask `k - 1` and 0 is
//!   background (used when no masks overlap), or an 8-bit grayscale
//!   "pages" image of size `(N * H) x W` holding the N binary masks
//!   stacked vertically as 0/255 (used when masks overlap).
//! * `<id>.mask.json`: `{n, areas, source, encoding, height, width}`.
//!
//! A label map without its JSON sidecar is still accepted; N is then the
//! largest label present.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image::ImageTensor;
use crate::mask::MaskSet;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CoreError + '_ {
    move |source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn decode_err(path: &Path) -> impl FnOnce(image::ImageError) -> CoreError + '_ {
    move |source| CoreError::Decode {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads an 8- or 16-bit PNG as a 1- or 3-channel image in `[0, 1]`.
/// Alpha is dropped.
pub fn load_png(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path).map_err(decode_err(path))?;
    let sixteen = img.color().bytes_per_pixel() / img.color().channel_count() >= 2;
    let gray = !img.color().has_color();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let channels = if gray { 1 } else { 3 };
    let scale = if sixteen { 65535.0 } else { 255.0 };
    let interleaved: Vec<f64> = match (gray, sixteen) {
        (true, true) => img.to_luma16().into_raw().into_iter().map(|v| v as f64 / scale).collect(),
        (true, false) => img.to_luma8().into_raw().into_iter().map(|v| v as f64 / scale).collect(),
        (false, true) => img.to_rgb16().into_raw().into_iter().map(|v| v as f64 / scale).collect(),
        (false, false) => img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / scale).collect(),
    };
    ImageTensor::from_fn(channels, h, w, |c, y, x| interleaved[(y * w + x) * channels + c])
}

/// Writes an image as PNG with the given bit depth (8 or 16), clamping to `[0, 1]`.
pub fn save_png(path: &Path, img: &ImageTensor, bits: u8) -> Result<()> {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let quantize = |v: f64, max: f64| (v.clamp(0.0, 1.0) * max).round();
    let mut interleaved = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                interleaved.push(img.get(ch, y, x));
            }
        }
    }
    let (w32, h32) = (w as u32, h as u32);
    let dynimg = match (c, bits) {
        (1, 8) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w32, h32, interleaved.iter().map(|&v| quantize(v, 255.0) as u8).collect())
                .expect("buffer size"),
        ),
        (1, 16) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w32, h32, interleaved.iter().map(|&v| quantize(v, 65535.0) as u16).collect())
                .expect("buffer size"),
        ),
        (3, 8) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w32, h32, interleaved.iter().map(|&v| quantize(v, 255.0) as u8).collect())
                .expect("buffer size"),
        ),
        (3, 16) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w32, h32, interleaved.iter().map(|&v| quantize(v, 65535.0) as u16).collect())
                .expect("buffer size"),
        ),
        _ => return Err(CoreError::InvalidArgument(format!("unsupported bit depth {bits}"))),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    dynimg.save(path).map_err(decode_err(path))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskEncoding {
    LabelMap,
    Pages,
}

/// JSON sidecar describing a stored mask set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskManifest {
    pub n: usize,
    pub areas: Vec<usize>,
    pub source: String,
    pub encoding: MaskEncoding,
    pub height: usize,
    pub width: usize,
}

pub fn mask_png_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.mask.png"))
}

pub fn mask_json_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.mask.json"))
}

/// Stores `masks` for image `id`, choosing the label-map encoding when the
/// masks are disjoint and fit 16 bits, the stacked-pages encoding otherwise.
pub fn save_masks(dir: &Path, id: &str, masks: &MaskSet, source: &str) -> Result<MaskManifest> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (n, h, w) = (masks.n(), masks.height(), masks.width());
    let encoding = if masks.is_disjoint() && n < u16::MAX as usize {
        MaskEncoding::LabelMap
    } else {
        MaskEncoding::Pages
    };
    let png = mask_png_path(dir, id);
    match encoding {
        MaskEncoding::LabelMap => {
            let mut labels = vec![0u16; h * w];
            for (k, m) in masks.channels().enumerate() {
                for (l, &v) in labels.iter_mut().zip(m) {
                    if v == 1 {
                        *l = (k + 1) as u16;
                    }
                }
            }
            ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, labels)
                .expect("buffer size")
                .save(&png)
                .map_err(decode_err(&png))?;
        }
        MaskEncoding::Pages => {
            let pages: Vec<u8> = masks.as_slice().iter().map(|&v| v * 255).collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, (n * h) as u32, pages)
                .expect("buffer size")
                .save(&png)
                .map_err(decode_err(&png))?;
        }
    }
    let manifest = MaskManifest {
        n,
        areas: masks.areas().to_vec(),
        source: source.to_string(),
        encoding,
        height: h,
        width: w,
    };
    let json = mask_json_path(dir, id);
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| CoreError::Json {
        path: json.clone(),
        source,
    })?;
    fs::write(&json, text).map_err(io_err(&json))?;
    Ok(manifest)
}

/// Loads the mask set stored for image `id`.
pub fn load_masks(dir: &Path, id: &str) -> Result<MaskSet> {
    let png = mask_png_path(dir, id);
    if !png.exists() {
        return Err(CoreError::MissingMask {
            id: id.to_string(),
            dir: dir.to_path_buf(),
        });
    }
    let json = mask_json_path(dir, id);
    let manifest: Option<MaskManifest> = if json.exists() {
        let text = fs::read_to_string(&json).map_err(io_err(&json))?;
        Some(serde_json::from_str(&text).map_err(|source| CoreError::Json {
            path: json.clone(),
            source,
        })?)
    } else {
        None
    };
    let img = image::open(&png).map_err(decode_err(&png))?;
    let encoding = manifest.as_ref().map_or(MaskEncoding::LabelMap, |m| m.encoding);
    let masks = match encoding {
        MaskEncoding::LabelMap => {
            let labels = img.to_luma16();
            let (w, h) = (labels.width() as usize, labels.height() as usize);
            let raw = labels.into_raw();
            let n = match &manifest {
                Some(m) => m.n,
                None => raw.iter().copied().max().unwrap_or(0) as usize,
            };
            if n == 0 {
                return Err(CoreError::InvalidMask(format!("{}: label map has no labels", png.display())));
            }
            if let Some(&bad) = raw.iter().find(|&&l| l as usize > n) {
                return Err(CoreError::InvalidMask(format!("{}: label {bad} exceeds n = {n}", png.display())));
            }
            let mut data = vec![0u8; n * h * w];
            for (p, &l) in raw.iter().enumerate() {
                if l > 0 {
                    data[(l as usize - 1) * h * w + p] = 1;
                }
            }
            MaskSet::new(data, n, h, w)?
        }
        MaskEncoding::Pages => {
            let m = manifest.as_ref().expect("pages encoding always has a manifest");
            let pages = img.to_luma8();
            if pages.width() as usize != m.width || pages.height() as usize != m.n * m.height {
                return Err(CoreError::InvalidMask(format!(
                    "{}: page image is {}x{}, manifest says {} pages of {}x{}",
                    png.display(),
                    pages.width(),
                    pages.height(),
                    m.n,
                    m.width,
                    m.height
                )));
            }
            let data = pages.into_raw().into_iter().map(|v| u8::from(v >= 128)).collect();
            MaskSet::new(data, m.n, m.height, m.width)?
        }
    };
    if let Some(m) = &manifest {
        if m.areas != masks.areas() {
            return Err(CoreError::InvalidMask(format!(
                "{}: stored areas {:?} disagree with decoded areas {:?}",
                json.display(),
                m.areas,
                masks.areas()
            )));
        }
    }
    Ok(masks)
}
