use crate::error::{CoreError, Result};

/// `N` binary masks over an `H x W` image, stored channel-major as 0/1 bytes.
///
/// Masks may overlap and need not cover the image. Empty channels are
/// allowed here; canonicalization drops them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSet {
    masks: Vec<u8>,
    areas: Vec<usize>,
    height: usize,
    width: usize,
}

impl MaskSet {
    /// Builds a mask set from `n * height * width` values in `{0, 1}`.
    pub fn new(masks: Vec<u8>, n: usize, height: usize, width: usize) -> Result<Self> {
        if n == 0 {
            return Err(CoreError::InvalidMask("mask set must hold at least one mask".into()));
        }
        if height == 0 || width == 0 || masks.len() != n * height * width {
            return Err(CoreError::Shape {
                left: vec![masks.len()],
                right: vec![n, height, width],
            });
        }
        if let Some(i) = masks.iter().position(|&v| v > 1) {
            return Err(CoreError::InvalidMask(format!("value {} at index {i} is not binary", masks[i])));
        }
        let plane = height * width;
        let areas = masks
            .chunks(plane)
            .map(|m| m.iter().map(|&v| v as usize).sum())
            .collect();
        Ok(Self {
            masks,
            areas,
            height,
            width,
        })
    }

    pub fn from_channels(channels: &[Vec<u8>], height: usize, width: usize) -> Result<Self> {
        let masks = channels.concat();
        Self::new(masks, channels.len(), height, width)
    }

    /// Single mask covering the whole image.
    pub fn full(height: usize, width: usize) -> Self {
        Self::new(vec![1; height * width], 1, height, width).expect("valid full mask")
    }

    pub fn n(&self) -> usize {
        self.areas.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn areas(&self) -> &[usize] {
        &self.areas
    }

    pub fn channel(&self, k: usize) -> &[u8] {
        let plane = self.height * self.width;
        &self.masks[k * plane..(k + 1) * plane]
    }

    pub fn channels(&self) -> impl Iterator<Item = &[u8]> {
        self.masks.chunks(self.height * self.width)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.masks
    }

    /// Raster index of the first set pixel of channel `k`.
    pub fn first_set_pixel(&self, k: usize) -> Option<usize> {
        self.channel(k).iter().position(|&v| v == 1)
    }

    /// True when no pixel belongs to more than one mask.
    pub fn is_disjoint(&self) -> bool {
        let plane = self.height * self.width;
        (0..plane).all(|p| self.channels().filter(|m| m[p] == 1).count() <= 1)
    }

    /// Every channel resized with nearest-neighbour sampling.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(self.n() * height * width);
        for m in self.channels() {
            out.extend(resize_mask(m, (self.height, self.width), (height, width))?);
        }
        Self::new(out, self.n(), height, width)
    }
}

/// Nearest-neighbour resize of one binary mask; output stays binary.
///
/// Output pixel `(y, x)` samples source `(floor(y * H / h), floor(x * W / w))`.
pub fn resize_mask(mask: &[u8], from: (usize, usize), to: (usize, usize)) -> Result<Vec<u8>> {
    let ((h, w), (oh, ow)) = (from, to);
    if oh == 0 || ow == 0 || h == 0 || w == 0 {
        return Err(CoreError::InvalidArgument(format!("cannot resize {h}x{w} mask to {oh}x{ow}")));
    }
    if mask.len() != h * w {
        return Err(CoreError::Shape {
            left: vec![mask.len()],
            right: vec![h, w],
        });
    }
    let rows: Vec<usize> = (0..oh).map(|y| y * h / oh).collect();
    let cols: Vec<usize> = (0..ow).map(|x| x * w / ow).collect();
    let mut out = Vec::with_capacity(oh * ow);
    for &sy in &rows {
        for &sx in &cols {
            out.push(mask[sy * w + sx]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_mask_downsamples_to_constant() {
        let out = resize_mask(&[1; 256], (16, 16), (2, 2)).unwrap();
        assert_eq!(out, vec![1; 4]);
    }

    #[test]
    fn left_half_keeps_left_two_columns_at_quarter_size() {
        let mask: Vec<u8> = (0..64).map(|i| u8::from(i % 8 < 4)).collect();
        let out = resize_mask(&mask, (8, 8), (4, 4)).unwrap();
        // Column j samples source column 2j: 0 and 2 are set, 4 and 6 are not.
        for row in out.chunks(4) {
            assert_eq!(row, &[1, 1, 0, 0]);
        }
    }

    #[test]
    fn same_size_resize_is_identity() {
        let mask: Vec<u8> = (0..48).map(|i| u8::from(i % 5 == 0)).collect();
        assert_eq!(resize_mask(&mask, (6, 8), (6, 8)).unwrap(), mask);
    }

    #[test]
    fn rejects_degenerate_targets() {
        assert!(resize_mask(&[1; 4], (2, 2), (0, 1)).is_err());
        assert!(resize_mask(&[1; 3], (2, 2), (1, 1)).is_err());
    }

    #[test]
    fn mask_set_validates_binary_values_and_areas() {
        assert!(MaskSet::new(vec![0, 2, 1, 1], 1, 2, 2).is_err());
        assert!(MaskSet::new(vec![], 0, 2, 2).is_err());
        let m = MaskSet::new(vec![1, 0, 0, 0, 1, 1, 1, 0], 2, 2, 2).unwrap();
        assert_eq!(m.areas(), &[1, 3]);
        assert_eq!(m.first_set_pixel(1), Some(0));
        assert!(!m.is_disjoint());
    }

    proptest! {
        #[test]
        fn resize_preserves_binarity_and_is_idempotent(
            bits in proptest::collection::vec(0u8..2, 64),
            oh in 1usize..12,
            ow in 1usize..12,
        ) {
            let once = resize_mask(&bits, (8, 8), (oh, ow)).unwrap();
            prop_assert!(once.iter().all(|&v| v <= 1));
            let again = resize_mask(&once, (oh, ow), (oh, ow)).unwrap();
            prop_assert_eq!(once, again);
        }
    }
}
