//! Frozen multi-scale feature extraction and the `ADWF` feature container.
//!
//! The extractor is a bank of seeded random convolution filters applied to a
//! grayscale image at three resolutions (valid convolution, relu, average
//! pooling). It has no trainable state; any external backbone can be swapped
//! in by writing its activations into `ADWF` files.

mod extract;
mod format;
mod grid;
mod image;

pub use self::extract::{extract_features, ExtractorConfig, FeatureExtractor};
pub use self::format::{
    decode_feature_file, encode_feature_file, read_feature_file, read_features, write_feature_file,
    write_features, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use self::grid::{NormalizeMode, Normalizer, PositionGrid};
pub use self::image::{BBox, Image, Map2, Mask};

use crate::{Error, Result};

/// Activations laid out channel-major, `C x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "feature tensor {channels}x{height}x{width} has an empty dimension"
            )));
        }
        if channels * height * width != data.len() {
            return Err(Error::Shape(format!(
                "feature tensor {channels}x{height}x{width} got {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature tensor".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
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

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[(c * self.height + i) * self.width + j]
    }

    /// Per-position vectors in position-major order.
    pub fn to_grid(&self) -> PositionGrid {
        let n = self.height * self.width;
        let mut data = vec![0.0; n * self.channels];
        for c in 0..self.channels {
            for p in 0..n {
                data[p * self.channels + c] = self.data[c * n + p] as f64;
            }
        }
        PositionGrid::new(self.height, self.width, self.channels, data).expect("consistent dims")
    }

    pub fn from_grid(grid: &PositionGrid) -> Result<Self> {
        let n = grid.height() * grid.width();
        let d = grid.dim();
        let mut data = vec![0.0f32; n * d];
        for p in 0..n {
            for c in 0..d {
                data[c * n + p] = grid.data()[p * d + c] as f32;
            }
        }
        Self::new(d, grid.height(), grid.width(), data)
    }

    /// Single-channel tensor holding a 2-D map.
    pub fn from_map(map: &Map2) -> Result<Self> {
        Self::new(
            1,
            map.height(),
            map.width(),
            map.data().iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn to_map(&self, channel: usize) -> Map2 {
        let n = self.height * self.width;
        let data = self.data[channel * n..(channel + 1) * n]
            .iter()
            .map(|&v| v as f64)
            .collect();
        Map2::new(self.height, self.width, data).expect("consistent dims")
    }
}

/// Feature maps of one image at full, half and quarter resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleFeatures {
    scales: Vec<FeatureTensor>,
}

impl MultiScaleFeatures {
    pub const NUM_SCALES: usize = 3;

    /// Requires exactly three scales sharing the channel count, with spatial
    /// size non-increasing from one scale to the next.
    pub fn new(scales: Vec<FeatureTensor>) -> Result<Self> {
        if scales.len() != Self::NUM_SCALES {
            return Err(Error::Shape(format!(
                "expected {} scales, got {}",
                Self::NUM_SCALES,
                scales.len()
            )));
        }
        for w in scales.windows(2) {
            if w[0].channels != w[1].channels {
                return Err(Error::Shape("scales disagree on channel count".into()));
            }
            if w[1].height > w[0].height || w[1].width > w[0].width {
                return Err(Error::Shape(format!(
                    "scale {}x{} follows smaller scale {}x{}",
                    w[1].height, w[1].width, w[0].height, w[0].width
                )));
            }
        }
        Ok(Self { scales })
    }

    pub fn scales(&self) -> &[FeatureTensor] {
        &self.scales
    }

    pub fn into_scales(self) -> Vec<FeatureTensor> {
        self.scales
    }

    pub fn channels(&self) -> usize {
        self.scales[0].channels
    }
}

/// Per-position maximum over the channel dimension.
pub fn activation_summary(f: &FeatureTensor) -> Map2 {
    let n = f.height * f.width;
    let mut out = vec![f64::NEG_INFINITY; n];
    for c in 0..f.channels {
        for (o, &v) in out.iter_mut().zip(&f.data[c * n..(c + 1) * n]) {
            *o = o.max(v as f64);
        }
    }
    Map2::new(f.height, f.width, out).expect("consistent dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RngStream;

    #[test]
    fn summary_of_single_channel_is_identity() {
        let t = FeatureTensor::new(1, 2, 2, vec![1.0, -2.0, 3.5, 0.0]).unwrap();
        let m = activation_summary(&t);
        assert_eq!(m.data(), &[1.0, -2.0, 3.5, 0.0]);
    }

    #[test]
    fn summary_ignores_minimal_channel() {
        let mut data = vec![0.5, 1.5, -0.5, 2.0];
        data.extend([f32::MIN; 4]);
        let t = FeatureTensor::new(2, 2, 2, data).unwrap();
        assert_eq!(activation_summary(&t).data(), &[0.5, 1.5, -0.5, 2.0]);
    }

    #[test]
    fn summary_matches_brute_force() {
        let mut rng = RngStream::new(3);
        let data: Vec<f32> = (0..12).map(|_| rng.normal() as f32).collect();
        let t = FeatureTensor::new(3, 2, 2, data).unwrap();
        let m = activation_summary(&t);
        for i in 0..2 {
            for j in 0..2 {
                let mut best = f32::NEG_INFINITY;
                for c in 0..3 {
                    if t.get(c, i, j) > best {
                        best = t.get(c, i, j);
                    }
                }
                assert_eq!(m.get(i, j), best as f64);
            }
        }
    }

    #[test]
    fn grid_roundtrip() {
        let data: Vec<f32> = (0..24).map(|v| v as f32).collect();
        let t = FeatureTensor::new(2, 3, 4, data).unwrap();
        let g = t.to_grid();
        assert_eq!(g.vector(0, 1), &[1.0, 13.0]);
        assert_eq!(FeatureTensor::from_grid(&g).unwrap(), t);
    }

    #[test]
    fn multiscale_rejects_channel_mismatch() {
        let a = FeatureTensor::zeros(2, 4, 4);
        let b = FeatureTensor::zeros(3, 2, 2);
        let c = FeatureTensor::zeros(2, 1, 1);
        assert!(MultiScaleFeatures::new(vec![a.clone(), b, c.clone()]).is_err());
        assert!(MultiScaleFeatures::new(vec![a.clone(), c.clone()]).is_err());
        assert!(MultiScaleFeatures::new(vec![a, FeatureTensor::zeros(2, 2, 2), c]).is_ok());
    }
}
