use super::{FeatureTensor, MultiScaleFeatures};
use crate::{Error, Result};

/// Per-position feature vectors, position-major: the vector at `(i, j)`
/// occupies `data[(i * width + j) * dim ..][..dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionGrid {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PositionGrid {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if height * width * dim != data.len() {
            return Err(Error::Shape(format!(
                "{height}x{width} grid of {dim}-vectors got {} values",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, dim: usize) -> Self {
        Self {
            height,
            width,
            dim,
            data: vec![0.0; height * width * dim],
        }
    }

    /// A single position holding `v`.
    pub fn single(v: Vec<f64>) -> Self {
        let dim = v.len();
        Self {
            height: 1,
            width: 1,
            dim,
            data: v,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn vector(&self, i: usize, j: usize) -> &[f64] {
        self.at(i * self.width + j)
    }

    /// Vector at flat position index `p`.
    pub fn at(&self, p: usize) -> &[f64] {
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    pub fn at_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.data[p * self.dim..(p + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn same_layout(&self, other: &PositionGrid) -> bool {
        self.height == other.height && self.width == other.width && self.dim == other.dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeMode {
    /// `(x - mean) / std` per channel.
    Standardize,
    /// `x / std` per channel; keeps exact zeros at zero.
    ScaleOnly,
}

impl NormalizeMode {
    pub fn code(self) -> u8 {
        match self {
            NormalizeMode::Standardize => 0,
            NormalizeMode::ScaleOnly => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(NormalizeMode::Standardize),
            1 => Some(NormalizeMode::ScaleOnly),
            _ => None,
        }
    }
}

/// Per-scale, per-channel feature statistics estimated on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mode: NormalizeMode,
    /// `mean[scale][channel]`
    pub mean: Vec<Vec<f64>>,
    /// `std[scale][channel]`, floored away from zero.
    pub std: Vec<Vec<f64>>,
}

const STD_FLOOR: f64 = 1e-6;

impl Normalizer {
    /// Identity transform for `scales` scales of `channels` channels.
    pub fn identity(scales: usize, channels: usize) -> Self {
        Self {
            mode: NormalizeMode::Standardize,
            mean: vec![vec![0.0; channels]; scales],
            std: vec![vec![1.0; channels]; scales],
        }
    }

    pub fn fit(samples: &[MultiScaleFeatures], mode: NormalizeMode) -> Result<Self> {
        let first = samples.first().ok_or_else(|| {
            Error::Insufficient("no samples to estimate feature statistics".into())
        })?;
        let channels = first.channels();
        let nscales = first.scales().len();
        let mut mean = vec![vec![0.0; channels]; nscales];
        let mut std = vec![vec![0.0; channels]; nscales];
        for s in 0..nscales {
            let mut count = 0usize;
            let mut sum = vec![0.0; channels];
            let mut sq = vec![0.0; channels];
            for ms in samples {
                let t = &ms.scales()[s];
                if t.channels() != channels {
                    return Err(Error::Shape("samples disagree on channel count".into()));
                }
                let n = t.height() * t.width();
                for c in 0..channels {
                    for &v in &t.data()[c * n..(c + 1) * n] {
                        sum[c] += v as f64;
                        sq[c] += (v as f64) * (v as f64);
                    }
                }
                count += n;
            }
            for c in 0..channels {
                let m = sum[c] / count as f64;
                let var = (sq[c] / count as f64 - m * m).max(0.0);
                mean[s][c] = m;
                std[s][c] = var.sqrt().max(STD_FLOOR);
            }
        }
        Ok(Self { mode, mean, std })
    }

    pub fn scales(&self) -> usize {
        self.mean.len()
    }

    pub fn channels(&self) -> usize {
        self.mean.first().map_or(0, Vec::len)
    }

    /// Normalized position grid of scale `scale`.
    pub fn apply(&self, scale: usize, t: &FeatureTensor) -> Result<PositionGrid> {
        if scale >= self.scales() || t.channels() != self.channels() {
            return Err(Error::Shape(format!(
                "normalizer for {} scales of {} channels applied to scale {scale} with {} channels",
                self.scales(),
                self.channels(),
                t.channels()
            )));
        }
        let mut g = t.to_grid();
        let d = g.dim();
        let (m, s) = (&self.mean[scale], &self.std[scale]);
        for v in g.data_mut().chunks_mut(d) {
            for c in 0..d {
                v[c] = match self.mode {
                    NormalizeMode::Standardize => (v[c] - m[c]) / s[c],
                    NormalizeMode::ScaleOnly => v[c] / s[c],
                };
            }
        }
        Ok(g)
    }

    pub fn apply_all(&self, ms: &MultiScaleFeatures) -> Result<Vec<PositionGrid>> {
        ms.scales()
            .iter()
            .enumerate()
            .map(|(s, t)| self.apply(s, t))
            .collect()
    }
}
