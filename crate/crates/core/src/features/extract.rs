use serde::{Deserialize, Serialize};

use super::{FeatureTensor, Image, Mask, MultiScaleFeatures};
use crate::{Error, Result, RngStream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub seed: u64,
    pub num_filters: usize,
    pub kernel: usize,
    pub pool: usize,
    /// Downsampling factor of each scale relative to the input image.
    pub scale_divisors: [usize; 3],
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_filters: 8,
            kernel: 3,
            pool: 2,
            scale_divisors: [1, 2, 4],
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_filters == 0 || self.kernel == 0 || self.pool == 0 {
            return Err(Error::InvalidArgument(
                "extractor needs at least one filter, kernel >= 1 and pool >= 1".into(),
            ));
        }
        if self.scale_divisors.contains(&0) {
            return Err(Error::InvalidArgument(
                "scale divisors must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Pooled feature-grid size of `scale` for an image of `height x width`.
    pub fn grid_dims(&self, scale: usize, height: usize, width: usize) -> Option<(usize, usize)> {
        let r = self.scale_divisors[scale];
        let (h, w) = (height / r, width / r);
        if h < self.kernel || w < self.kernel {
            return None;
        }
        let (ch, cw) = (h - self.kernel + 1, w - self.kernel + 1);
        let (ph, pw) = (ch / self.pool, cw / self.pool);
        (ph > 0 && pw > 0).then_some((ph, pw))
    }
}

/// Seeded bank of unit-norm Gaussian filters shared by all scales.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    cfg: ExtractorConfig,
    filters: Vec<Vec<f64>>,
}

impl FeatureExtractor {
    pub fn new(cfg: ExtractorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = RngStream::new(cfg.seed).fork(0xF117E4);
        let kk = cfg.kernel * cfg.kernel;
        let filters = (0..cfg.num_filters)
            .map(|_| {
                let mut f: Vec<f64> = (0..kk).map(|_| rng.normal()).collect();
                let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                f.iter_mut().for_each(|v| *v /= norm);
                f
            })
            .collect();
        Ok(Self { cfg, filters })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.cfg
    }

    pub fn filters(&self) -> &[Vec<f64>] {
        &self.filters
    }

    pub fn extract(&self, image: &Image) -> Result<MultiScaleFeatures> {
        let gray = image.to_gray_f64();
        let (h, w) = (image.height(), image.width());
        let mut scales = Vec::with_capacity(3);
        for s in 0..3 {
            let r = self.cfg.scale_divisors[s];
            if self.cfg.grid_dims(s, h, w).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "{w}x{h} image is too small for kernel {} and pool {} at 1/{r} scale",
                    self.cfg.kernel, self.cfg.pool
                )));
            }
            let (sh, sw, px) = downsample(&gray, h, w, r);
            scales.push(self.extract_scale(&px, sh, sw));
        }
        MultiScaleFeatures::new(scales)
    }

    fn extract_scale(&self, px: &[f64], h: usize, w: usize) -> FeatureTensor {
        let k = self.cfg.kernel;
        let p = self.cfg.pool;
        let (ch, cw) = (h - k + 1, w - k + 1);
        let (ph, pw) = (ch / p, cw / p);
        let c = self.filters.len();
        let mut out = vec![0.0f32; c * ph * pw];
        let mut conv = vec![0.0; ch * cw];
        for (fi, f) in self.filters.iter().enumerate() {
            for i in 0..ch {
                for j in 0..cw {
                    let mut acc = 0.0;
                    for a in 0..k {
                        let row = &px[(i + a) * w + j..(i + a) * w + j + k];
                        let frow = &f[a * k..(a + 1) * k];
                        acc += row.iter().zip(frow).map(|(x, y)| x * y).sum::<f64>();
                    }
                    conv[i * cw + j] = acc.max(0.0);
                }
            }
            let norm = 1.0 / (p * p) as f64;
            for i in 0..ph {
                for j in 0..pw {
                    let mut acc = 0.0;
                    for a in 0..p {
                        for b in 0..p {
                            acc += conv[(i * p + a) * cw + j * p + b];
                        }
                    }
                    out[(fi * ph + i) * pw + j] = (acc * norm) as f32;
                }
            }
        }
        FeatureTensor::new(c, ph, pw, out).expect("finite by construction")
    }

    /// Feature-grid mask of `scale`: a cell is foreground iff its receptive
    /// field contains at least one foreground pixel. Background cells of a
    /// background-zeroed image therefore carry exactly zero features.
    pub fn foreground_grid(&self, mask: &Mask, scale: usize) -> Result<Mask> {
        let (gh, gw) = self
            .cfg
            .grid_dims(scale, mask.height(), mask.width())
            .ok_or_else(|| Error::InvalidArgument("mask too small for extractor".into()))?;
        let r = self.cfg.scale_divisors[scale];
        let (p, k) = (self.cfg.pool, self.cfg.kernel);
        let span = (p + k - 1) * r;
        Ok(Mask::from_fn(gw, gh, |i, j| {
            let (r0, c0) = (i * p * r, j * p * r);
            let r1 = (r0 + span).min(mask.height());
            let c1 = (c0 + span).min(mask.width());
            (r0..r1).any(|y| (c0..c1).any(|x| mask.get(y, x)))
        }))
    }
}

/// Box-average downsampling by integer factor `r`.
fn downsample(px: &[f64], h: usize, w: usize, r: usize) -> (usize, usize, Vec<f64>) {
    if r == 1 {
        return (h, w, px.to_vec());
    }
    let (sh, sw) = (h / r, w / r);
    let norm = 1.0 / (r * r) as f64;
    let mut out = vec![0.0; sh * sw];
    for i in 0..sh {
        for j in 0..sw {
            let mut acc = 0.0;
            for a in 0..r {
                for b in 0..r {
                    acc += px[(i * r + a) * w + j * r + b];
                }
            }
            out[i * sw + j] = acc * norm;
        }
    }
    (sh, sw, out)
}

pub fn extract_features(image: &Image, cfg: &ExtractorConfig) -> Result<MultiScaleFeatures> {
    FeatureExtractor::new(cfg.clone())?.extract(image)
}
