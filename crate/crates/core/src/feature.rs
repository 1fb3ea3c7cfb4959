use crate::error::{CoreError, Result};

/// `[C, h, w]` activations together with their spatial stride relative to
/// the input image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    data: Vec<f64>,
    channels: usize,
    height: usize,
    width: usize,
    stride: usize,
}

impl FeatureMap {
    pub fn new(data: Vec<f64>, channels: usize, height: usize, width: usize, stride: usize) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(CoreError::Shape {
                left: vec![data.len()],
                right: vec![channels, height, width],
            });
        }
        if stride == 0 {
            return Err(CoreError::InvalidArgument("feature stride must be >= 1".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidArgument("feature map holds non-finite values".into()));
        }
        Ok(Self {
            data,
            channels,
            height,
            width,
            stride,
        })
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

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
