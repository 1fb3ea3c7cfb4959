use crate::error::{CoreError, Result};

/// Planar `[C, H, W]` image with nominal values in `[0, 1]`.
///
/// Construction enforces the shape contract shared by the whole pipeline:
/// one or three channels, both sides at least 8 and divisible by 8 (the
/// perceptual stage runs at 1/8 resolution), and finite entries. Values
/// are not range-checked; restorer outputs may leave `[0, 1]` transiently.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Vec<f64>,
    channels: usize,
    height: usize,
    width: usize,
}

impl ImageTensor {
    pub fn new(data: Vec<f64>, channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(CoreError::InvalidImage(format!("{channels} channels (expected 1 or 3)")));
        }
        if height < 8 || width < 8 || !height.is_multiple_of(8) || !width.is_multiple_of(8) {
            return Err(CoreError::InvalidImage(format!(
                "{height}x{width} (sides must be >= 8 and divisible by 8)"
            )));
        }
        if data.len() != channels * height * width {
            return Err(CoreError::Shape {
                left: vec![data.len()],
                right: vec![channels, height, width],
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::InvalidImage(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            data,
            channels,
            height,
            width,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; channels * height * width], channels, height, width)
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(data, channels, height, width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Applies `f` to every value; the result must stay finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.data.iter().map(|&v| f(v)).collect(), self.channels, self.height, self.width)
    }

    pub fn clamp01(&self) -> Self {
        Self {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..*self
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    /// Rec. 601 luma for RGB, the single plane for grayscale.
    pub fn luminance(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.clone();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        r.iter()
            .zip(g)
            .zip(b)
            .map(|((r, g), b)| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect()
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(CoreError::Shape {
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(ImageTensor::filled(2, 8, 8, 0.0).is_err());
        assert!(ImageTensor::filled(3, 12, 16, 0.0).is_err());
        assert!(ImageTensor::filled(3, 0, 8, 0.0).is_err());
        assert!(ImageTensor::new(vec![0.0; 10], 1, 8, 8).is_err());
        assert!(ImageTensor::filled(1, 8, 16, 0.5).is_ok());
    }

    #[test]
    fn rejects_non_finite() {
        let mut v = vec![0.0; 64];
        v[7] = f64::NAN;
        assert!(ImageTensor::new(v, 1, 8, 8).is_err());
    }

    #[test]
    fn indexing_is_planar() {
        let img = ImageTensor::from_fn(3, 8, 8, |c, y, x| (c * 100 + y * 10 + x) as f64).unwrap();
        assert_eq!(img.get(2, 3, 4), 234.0);
        assert_eq!(img.plane(1)[9], 111.0);
    }
}
