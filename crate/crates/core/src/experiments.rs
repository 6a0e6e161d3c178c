//! Controlled synthetic experiments on the toy shape datasets: rotation
//! augmentation versus rotated nominals, and where detectors place their
//! anomaly mass when the background is blacked out.

use serde::{Deserialize, Serialize};

use crate::dataprep::{apply_mask, rotate_image};
use crate::evalharness::{auroc, background_score_fraction};
use crate::features::{
    ExtractorConfig, FeatureExtractor, Image, Mask, MultiScaleFeatures, NormalizeMode, Normalizer,
};
use crate::flow::{FlowConfig, TrainConfig};
use crate::pipeline::{DiscDetectorConfig, DiscModel, FlowDetectorConfig, FlowModel};
use crate::toy::{l_shape, render, square, stripe_defect};
use crate::{Label, Result, RngStream};

const SIZE: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotationExperimentConfig {
    pub seed: u64,
    /// Unrotated nominal training images.
    pub train_images: usize,
    /// Test images per group: nominal, each rotation, anomalous.
    pub test_images: usize,
    /// Side and gray-level contrast of the striped defect patch.
    pub defect_side: usize,
    pub defect_amplitude: f64,
    pub extractor: ExtractorConfig,
    pub detector: FlowDetectorConfig,
}

/// Flow settings sized for 24-pixel toy images.
pub fn toy_flow_detector() -> FlowDetectorConfig {
    FlowDetectorConfig {
        flow: FlowConfig {
            hidden: 32,
            ..FlowConfig::default()
        },
        train: TrainConfig {
            epochs: 30,
            batch_size: 8,
            ..TrainConfig::default()
        },
        ..FlowDetectorConfig::default()
    }
}

impl Default for RotationExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_images: 32,
            test_images: 16,
            defect_side: 6,
            defect_amplitude: 60.0,
            extractor: ExtractorConfig::default(),
            detector: toy_flow_detector(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationOutcome {
    /// Mean score of rotated nominals, model without rotations minus model
    /// with rotations.
    pub rotated_mean_gap: f64,
    pub auroc_without: f64,
    pub auroc_with: f64,
}

fn l_object(rng: &mut RngStream) -> (Image, Mask) {
    let fg = l_shape(SIZE, 5, 6, 14, 12, 4);
    (render(&fg, 180.0, 30.0, 6.0, rng), fg)
}

/// Trains one flow on upright nominal L shapes and one on the same images
/// plus their 90, 180 and 270 degree rotations, then scores a test set of
/// upright nominals, rotated nominals and upright objects with a striped
/// defect. Both models share feature statistics so their scores compare.
pub fn rotation_experiment(cfg: &RotationExperimentConfig) -> Result<RotationOutcome> {
    let ex = FeatureExtractor::new(cfg.extractor.clone())?;
    let root = RngStream::new(cfg.seed);
    let mut rng = root.fork(0);
    let upright: Vec<Image> = (0..cfg.train_images)
        .map(|_| l_object(&mut rng).0)
        .collect();
    let with_rot: Vec<Image> = upright
        .iter()
        .flat_map(|img| (0..4).map(move |q| rotate_image(img, q)))
        .collect();
    let f_without = extract_all(&ex, &upright)?;
    let f_with = extract_all(&ex, &with_rot)?;
    let norm = Normalizer::fit(&f_with, NormalizeMode::Standardize)?;
    let seed = root.fork(1).seed();
    let (without, _) =
        FlowModel::fit_with_normalizer(&f_without, norm.clone(), &cfg.detector, seed)?;
    let (with, _) = FlowModel::fit_with_normalizer(&f_with, norm, &cfg.detector, seed)?;

    let mut rng = root.fork(2);
    let mut test: Vec<(Image, Label, bool)> = Vec::new();
    for _ in 0..cfg.test_images {
        test.push((l_object(&mut rng).0, Label::Nominal, false));
        for q in 1..4 {
            test.push((rotate_image(&l_object(&mut rng).0, q), Label::Nominal, true));
        }
        let (img, fg) = l_object(&mut rng);
        test.push((
            stripe_defect(&img, &fg, cfg.defect_side, cfg.defect_amplitude, &mut rng).0,
            Label::Anomalous,
            false,
        ));
    }
    let feats = extract_all(&ex, &test.iter().map(|t| t.0.clone()).collect::<Vec<_>>())?;
    let s_without = feats
        .iter()
        .map(|f| without.score(f))
        .collect::<Result<Vec<_>>>()?;
    let s_with = feats
        .iter()
        .map(|f| with.score(f))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Label> = test.iter().map(|t| t.1).collect();
    let rotated: Vec<usize> = (0..test.len()).filter(|&i| test[i].2).collect();
    let mean = |s: &[f64]| rotated.iter().map(|&i| s[i]).sum::<f64>() / rotated.len() as f64;
    Ok(RotationOutcome {
        rotated_mean_gap: mean(&s_without) - mean(&s_with),
        auroc_without: auroc(&s_without, &labels)?,
        auroc_with: auroc(&s_with, &labels)?,
    })
}

fn extract_all(ex: &FeatureExtractor, images: &[Image]) -> Result<Vec<MultiScaleFeatures>> {
    use rayon::prelude::*;
    images.par_iter().map(|i| ex.extract(i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundExperimentConfig {
    pub seed: u64,
    pub train_images: usize,
    pub test_images: usize,
    pub extractor: ExtractorConfig,
    pub flow: FlowDetectorConfig,
    pub discriminator: DiscDetectorConfig,
}

impl Default for BackgroundExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_images: 32,
            test_images: 8,
            extractor: ExtractorConfig::default(),
            flow: toy_flow_detector(),
            discriminator: DiscDetectorConfig {
                hidden: 16,
                epochs: 10,
                ..DiscDetectorConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundOutcome {
    /// Mean over test images of the flow's background score fraction.
    pub flow_fraction: f64,
    pub disc_fraction: f64,
}

/// Square objects alternating between two positions, background blacked
/// out by the mask. A flow and a discriminator are trained on the same
/// masked images; the result is the share of each localization map that
/// falls on background cells of masked test images.
pub fn background_experiment(cfg: &BackgroundExperimentConfig) -> Result<BackgroundOutcome> {
    let ex = FeatureExtractor::new(cfg.extractor.clone())?;
    let root = RngStream::new(cfg.seed);
    let object = |i: usize, rng: &mut RngStream| -> Result<(Image, Mask)> {
        let left = if i % 2 == 0 { 3 } else { 15 };
        let fg = square(SIZE, SIZE, 9, left, 6);
        let img = render(&fg, 180.0, 90.0, 6.0, rng);
        Ok((apply_mask(&img, &fg)?, fg))
    };
    let mut rng = root.fork(0);
    let train: Vec<Image> = (0..cfg.train_images)
        .map(|i| object(i, &mut rng).map(|o| o.0))
        .collect::<Result<_>>()?;
    let feats = extract_all(&ex, &train)?;
    let seed = root.fork(1).seed();
    let (flow, _) = FlowModel::fit(&feats, &cfg.flow, seed)?;
    let (disc, _) = DiscModel::fit(&feats, &cfg.discriminator, seed)?;

    let mut rng = root.fork(2);
    let (mut flow_acc, mut disc_acc) = (0.0, 0.0);
    for i in 0..cfg.test_images {
        let (img, fg) = object(i, &mut rng)?;
        let f = ex.extract(&img)?;
        let grid_fg = ex.foreground_grid(&fg, 0)?;
        flow_acc += background_score_fraction(&flow.localization(&f)?, &grid_fg)?;
        disc_acc += background_score_fraction(&disc.score_map(&f)?.1, &grid_fg)?;
    }
    let n = cfg.test_images.max(1) as f64;
    Ok(BackgroundOutcome {
        flow_fraction: flow_acc / n,
        disc_fraction: disc_acc / n,
    })
}
