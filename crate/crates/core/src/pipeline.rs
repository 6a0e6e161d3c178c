//! Image-to-score glue shared by the command line and the evaluation
//! protocol: feature extraction per manifest record, normalization, and
//! trainable flow and discriminator detectors.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataprep::{apply_mask, DatasetManifest, SampleRecord};
use crate::evalharness::{Detector, DetectorFactory};
use crate::features::{
    ExtractorConfig, FeatureExtractor, Map2, Mask, MultiScaleFeatures, NormalizeMode, Normalizer,
};
use crate::flow::{
    likelihood_ratio_score, localization_map, train_background_flow, train_flow, Aggregation,
    CouplingFlow, FlowConfig, FlowSample, TrainConfig, TrainHistory,
};
use crate::synthdisc::{
    disc_score, train_discriminator, AdaptorDiscriminator, DiscConfig, DiscSample, DiscTrainConfig,
    DiscTrainHistory, SynthGlobalConfig, SynthLocalConfig,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub extractor: ExtractorConfig,
    /// Zero background pixels with the record's mask before extraction.
    pub mask_inputs: bool,
}

/// Loads one record's image (masked if requested) and extracts features.
pub fn record_features(
    manifest: &DatasetManifest,
    record: &SampleRecord,
    extractor: &FeatureExtractor,
    mask_inputs: bool,
) -> Result<MultiScaleFeatures> {
    let mut image = manifest.load_image(record)?;
    if mask_inputs {
        let fg = manifest.load_mask(record)?.ok_or_else(|| {
            Error::Validation(format!(
                "sample {} has no mask but masking was requested",
                record.sample_id
            ))
        })?;
        image = apply_mask(&image, &fg)?;
    }
    extractor.extract(&image)
}

/// [`record_features`] for many records in parallel; the first failure
/// in record order is reported with its sample id.
pub fn extract_records(
    manifest: &DatasetManifest,
    records: &[SampleRecord],
    extractor: &FeatureExtractor,
    mask_inputs: bool,
) -> Result<Vec<MultiScaleFeatures>> {
    records
        .par_iter()
        .map(|r| {
            record_features(manifest, r, extractor, mask_inputs)
                .map_err(|e| Error::Validation(format!("sample {}: {e}", r.sample_id)))
        })
        .collect()
}

pub fn flow_sample(normalizer: &Normalizer, features: &MultiScaleFeatures) -> Result<FlowSample> {
    Ok(FlowSample::new(normalizer.apply_all(features)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowDetectorConfig {
    /// `dim` and `num_scales` are taken from the features; `seed` from the
    /// caller.
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub aggregation: Aggregation,
    /// When set, score by likelihood ratio against a background flow trained
    /// on copies perturbed with this noise fraction.
    pub background_noise: Option<f64>,
}

impl Default for FlowDetectorConfig {
    fn default() -> Self {
        Self {
            flow: FlowConfig::default(),
            train: TrainConfig::default(),
            aggregation: Aggregation::Mean,
            background_noise: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowModel {
    pub normalizer: Normalizer,
    pub flow: CouplingFlow,
    pub background: Option<CouplingFlow>,
    pub aggregation: Aggregation,
}

impl FlowModel {
    pub fn fit(
        features: &[MultiScaleFeatures],
        cfg: &FlowDetectorConfig,
        seed: u64,
    ) -> Result<(Self, TrainHistory)> {
        let normalizer = Normalizer::fit(features, NormalizeMode::Standardize)?;
        Self::fit_with_normalizer(features, normalizer, cfg, seed)
    }

    /// As [`fit`](Self::fit) with fixed feature statistics, so that scores of
    /// models trained on different data are comparable.
    pub fn fit_with_normalizer(
        features: &[MultiScaleFeatures],
        normalizer: Normalizer,
        cfg: &FlowDetectorConfig,
        seed: u64,
    ) -> Result<(Self, TrainHistory)> {
        let first = features
            .first()
            .ok_or_else(|| Error::Insufficient("no nominal training samples".into()))?;
        let data = features
            .iter()
            .map(|f| flow_sample(&normalizer, f))
            .collect::<Result<Vec<_>>>()?;
        let fc = FlowConfig {
            dim: first.channels(),
            num_scales: first.scales().len(),
            seed,
            ..cfg.flow.clone()
        };
        let tc = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let (flow, history) = train_flow(CouplingFlow::new(fc.clone())?, &data, &tc, None)?;
        let background = match cfg.background_noise {
            Some(noise) => {
                Some(train_background_flow(CouplingFlow::new(fc)?, &data, &tc, noise)?.0)
            }
            None => None,
        };
        Ok((
            Self {
                normalizer,
                flow,
                background,
                aggregation: cfg.aggregation,
            },
            history,
        ))
    }

    pub fn score(&self, features: &MultiScaleFeatures) -> Result<f64> {
        let x = flow_sample(&self.normalizer, features)?;
        match &self.background {
            Some(bg) => likelihood_ratio_score(&self.flow, bg, &x),
            None => self.flow.image_score(&x, self.aggregation),
        }
    }

    /// Per-position latent norms on the finest grid.
    pub fn localization(&self, features: &MultiScaleFeatures) -> Result<Map2> {
        let x = flow_sample(&self.normalizer, features)?;
        Ok(localization_map(&self.flow.transform(&x)?.0))
    }

    /// Mean `-log p / dim` per position on the finest grid.
    pub fn position_scores(&self, features: &MultiScaleFeatures) -> Result<Map2> {
        let x = flow_sample(&self.normalizer, features)?;
        Ok(self.flow.position_scores(&x)?.swap_remove(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscDetectorConfig {
    pub hidden: usize,
    pub gate_zero_features: bool,
    /// Feature scale the discriminator reads.
    pub scale: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub opacity: f64,
    pub texture_amplitude: f64,
    pub global_steps: usize,
}

impl Default for DiscDetectorConfig {
    fn default() -> Self {
        let t = DiscTrainConfig::default();
        let l = SynthLocalConfig::default();
        Self {
            hidden: DiscConfig::default().hidden,
            gate_zero_features: true,
            scale: 0,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            clip_norm: t.clip_norm,
            opacity: l.opacity,
            texture_amplitude: l.texture_amplitude,
            global_steps: t.global.steps,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscModel {
    pub normalizer: Normalizer,
    pub model: AdaptorDiscriminator,
    pub scale: usize,
}

/// Grid positions carrying any nonzero feature; all positions if none do.
pub fn nonzero_foreground(grid: &crate::PositionGrid) -> Mask {
    let fg = Mask::new(
        grid.width(),
        grid.height(),
        grid.vectors()
            .map(|v| v.iter().any(|&x| x != 0.0))
            .collect(),
    )
    .expect("grid dims");
    if fg.is_empty() {
        Mask::filled(grid.width(), grid.height(), true)
    } else {
        fg
    }
}

impl DiscModel {
    /// Features are scaled per channel without centering, so exact zeros
    /// (masked background) stay zero and remain gated.
    pub fn fit(
        features: &[MultiScaleFeatures],
        cfg: &DiscDetectorConfig,
        seed: u64,
    ) -> Result<(Self, DiscTrainHistory)> {
        let first = features
            .first()
            .ok_or_else(|| Error::Insufficient("no nominal training samples".into()))?;
        if cfg.scale >= first.scales().len() {
            return Err(Error::InvalidArgument(format!(
                "feature scale {} does not exist",
                cfg.scale
            )));
        }
        let normalizer = Normalizer::fit(features, NormalizeMode::ScaleOnly)?;
        let data = features
            .iter()
            .map(|f| {
                let g = normalizer.apply(cfg.scale, &f.scales()[cfg.scale])?;
                Ok(DiscSample {
                    foreground: nonzero_foreground(&g),
                    features: g,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = AdaptorDiscriminator::new(&DiscConfig {
            dim: first.channels(),
            hidden: cfg.hidden,
            seed,
            gate_zero_features: cfg.gate_zero_features,
        })?;
        let tc = DiscTrainConfig {
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            clip_norm: cfg.clip_norm,
            seed,
            local: SynthLocalConfig {
                opacity: cfg.opacity,
                texture_amplitude: cfg.texture_amplitude,
                ..SynthLocalConfig::default()
            },
            global: SynthGlobalConfig {
                steps: cfg.global_steps,
                ..SynthGlobalConfig::for_feature_std(1.0)
            },
        };
        let (model, history) = train_discriminator(model, &data, &tc)?;
        Ok((
            Self {
                normalizer,
                model,
                scale: cfg.scale,
            },
            history,
        ))
    }

    /// Image score (maximum probability) and the probability map.
    pub fn score_map(&self, features: &MultiScaleFeatures) -> Result<(f64, Map2)> {
        let t = features
            .scales()
            .get(self.scale)
            .ok_or_else(|| Error::Shape(format!("features lack scale {}", self.scale)))?;
        disc_score(&self.model, &self.normalizer.apply(self.scale, t)?)
    }
}

/// Protocol factory training a [`FlowModel`] on each fold's nominal images.
#[derive(Debug, Clone)]
pub struct FlowFactory {
    pub manifest_root: PathBuf,
    pub features: FeatureConfig,
    pub detector: FlowDetectorConfig,
}

/// Protocol factory training a [`DiscModel`] on each fold's nominal images.
#[derive(Debug, Clone)]
pub struct DiscFactory {
    pub manifest_root: PathBuf,
    pub features: FeatureConfig,
    pub detector: DiscDetectorConfig,
}

struct Scorer<F> {
    manifest: DatasetManifest,
    extractor: FeatureExtractor,
    mask_inputs: bool,
    score: F,
}

impl<F> Detector for Scorer<F>
where
    F: Fn(&MultiScaleFeatures) -> Result<f64> + Send + Sync,
{
    fn score(&self, records: &[SampleRecord]) -> Result<Vec<f64>> {
        let feats = extract_records(&self.manifest, records, &self.extractor, self.mask_inputs)?;
        feats.par_iter().map(|f| (self.score)(f)).collect()
    }
}

fn training_features(
    root: &Path,
    cfg: &FeatureConfig,
    train: &[SampleRecord],
) -> Result<(DatasetManifest, FeatureExtractor, Vec<MultiScaleFeatures>)> {
    let manifest = DatasetManifest::new(root, Vec::new());
    let extractor = FeatureExtractor::new(cfg.extractor.clone())?;
    let feats = extract_records(&manifest, train, &extractor, cfg.mask_inputs)?;
    Ok((manifest, extractor, feats))
}

impl DetectorFactory for FlowFactory {
    fn name(&self) -> String {
        "flow".into()
    }

    fn train(&self, train: &[SampleRecord], seed: u64) -> Result<Box<dyn Detector>> {
        let (manifest, extractor, feats) =
            training_features(&self.manifest_root, &self.features, train)?;
        let (model, _) = FlowModel::fit(&feats, &self.detector, seed)?;
        Ok(Box::new(Scorer {
            manifest,
            extractor,
            mask_inputs: self.features.mask_inputs,
            score: move |f: &MultiScaleFeatures| model.score(f),
        }))
    }
}

impl DetectorFactory for DiscFactory {
    fn name(&self) -> String {
        "discriminator".into()
    }

    fn train(&self, train: &[SampleRecord], seed: u64) -> Result<Box<dyn Detector>> {
        let (manifest, extractor, feats) =
            training_features(&self.manifest_root, &self.features, train)?;
        let (model, _) = DiscModel::fit(&feats, &self.detector, seed)?;
        Ok(Box::new(Scorer {
            manifest,
            extractor,
            mask_inputs: self.features.mask_inputs,
            score: move |f: &MultiScaleFeatures| model.score_map(f).map(|(s, _)| s),
        }))
    }
}
