use std::path::{Path, PathBuf};

use adw_core::checkpoint::{load_checkpoint, Model};
use adw_core::dataprep::{load_manifest, SampleRecord};
use adw_core::evalharness::{
    write_scores_csv, DetectorFactory, OracleFactory, ScoreRecord, SyntheticGaussianFactory,
};
use adw_core::features::{
    read_features, write_feature_file, FeatureExtractor, FeatureTensor, Map2, MultiScaleFeatures,
};
use adw_core::pipeline::{record_features, DiscModel, FlowModel};
use adw_core::Label;
use anyhow::Context;
use clap::Args;
use rayon::prelude::*;

use super::train::background_path;
use super::{finish, load_index, safe_name, write_text, ModelMeta, INDEX_FILE};
use crate::{DetectorKind, GlobalArgs, Invalid, RunConfig};

#[derive(Debug, Clone, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["features", "manifest"])))]
pub struct ScoreArgs {
    /// Checkpoint written by `adw train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Model-free detector (oracle or synthetic-gaussian) used without --model.
    #[arg(long, value_enum)]
    pub detector: Option<DetectorKind>,
    /// Feature directory to score.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Manifest to score; features are extracted as configured at training.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one localization map per sample into this directory.
    #[arg(long)]
    pub maps: Option<PathBuf>,
}

enum Scorer {
    Flow(FlowModel),
    Disc(DiscModel),
}

impl Scorer {
    fn score(&self, f: &MultiScaleFeatures) -> adw_core::Result<(f64, Map2)> {
        match self {
            Scorer::Flow(m) => Ok((m.score(f)?, m.localization(f)?)),
            Scorer::Disc(m) => m.score_map(f),
        }
    }
}

fn load_scorer(path: &Path) -> anyhow::Result<(Scorer, ModelMeta)> {
    let ckpt = load_checkpoint(path)?;
    let meta: ModelMeta = serde_json::from_str(&ckpt.metadata)
        .map_err(|e| Invalid(format!("{}: checkpoint metadata: {e}", path.display())))?;
    let normalizer = ckpt.normalizer.ok_or_else(|| {
        Invalid(format!(
            "{}: checkpoint lacks feature statistics",
            path.display()
        ))
    })?;
    let scorer = match ckpt.model {
        Model::Flow(flow) => {
            let fc = meta.flow.clone().unwrap_or_default();
            let background = if fc.background_noise.is_some() {
                match load_checkpoint(&background_path(path))?.model {
                    Model::Flow(bg) => Some(bg),
                    _ => return Err(Invalid("background checkpoint is not a flow".into()).into()),
                }
            } else {
                None
            };
            Scorer::Flow(FlowModel {
                normalizer,
                flow,
                background,
                aggregation: fc.aggregation,
            })
        }
        Model::Discriminator(model) => Scorer::Disc(DiscModel {
            normalizer,
            model,
            scale: meta.discriminator.as_ref().map_or(0, |d| d.scale),
        }),
    };
    Ok((scorer, meta))
}

enum Source {
    File(PathBuf),
    Record(usize),
}

struct Sample {
    id: String,
    label: Label,
    source: Source,
}

pub fn cmd_score(
    args: &ScoreArgs,
    mut cfg: RunConfig,
    _g: &GlobalArgs,
) -> anyhow::Result<Vec<PathBuf>> {
    if let Some(d) = args.detector {
        cfg.detector = d;
    }
    let mut inputs = Vec::new();
    let model = match &args.model {
        Some(p) => {
            inputs.push(p.clone());
            let (s, meta) = load_scorer(p)?;
            cfg.detector = meta.detector;
            cfg.features = meta.features.clone();
            Some(s)
        }
        None if cfg.detector.is_trainable() => {
            return Err(
                Invalid(format!("detector {} needs --model", cfg.detector.as_str())).into(),
            );
        }
        None => None,
    };
    let cfg = cfg.finalize();

    let (samples, manifest) = if let Some(dir) = &args.features {
        let index = load_index(dir)?;
        if model.is_some() && index.features != cfg.features {
            return Err(Invalid(format!(
                "{} was extracted with a different feature configuration than the model was trained on",
                dir.display()
            ))
            .into());
        }
        inputs.push(dir.join(INDEX_FILE));
        let samples: Vec<Sample> = index
            .records
            .iter()
            .map(|e| Sample {
                id: e.sample_id.clone(),
                label: e.label,
                source: Source::File(dir.join(&e.file)),
            })
            .collect();
        if model.is_some() {
            inputs.extend(samples.iter().filter_map(|s| match &s.source {
                Source::File(p) => Some(p.clone()),
                Source::Record(_) => None,
            }));
        }
        (samples, None)
    } else {
        let path = args.manifest.as_ref().expect("clap enforces one input");
        let m = load_manifest(path)?;
        inputs.push(path.clone());
        if model.is_some() {
            inputs.extend(m.records.iter().map(|r| m.resolve(&r.image)));
        }
        let samples = m
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| Sample {
                id: r.sample_id.clone(),
                label: r.label,
                source: Source::Record(i),
            })
            .collect();
        (samples, Some(m))
    };

    let mut outputs = vec![args.out.clone()];
    let scores: Vec<f64> = match &model {
        Some(scorer) => {
            let extractor = match &manifest {
                Some(_) => Some(FeatureExtractor::new(cfg.features.extractor.clone())?),
                None => None,
            };
            let load = |s: &Sample| -> adw_core::Result<MultiScaleFeatures> {
                match &s.source {
                    Source::File(p) => read_features(p),
                    Source::Record(i) => {
                        let m = manifest.as_ref().expect("record source implies manifest");
                        record_features(
                            m,
                            &m.records[*i],
                            extractor.as_ref().expect("extractor"),
                            cfg.features.mask_inputs,
                        )
                    }
                }
            };
            let names = super::unique_names(samples.iter().map(|s| s.id.as_str()))?;
            if let Some(dir) = &args.maps {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
                outputs.extend(names.iter().map(|n| dir.join(format!("{n}.adwf"))));
            }
            samples
                .par_iter()
                .zip(&names)
                .map(|(s, name)| {
                    let (score, map) = load(s)
                        .and_then(|f| scorer.score(&f))
                        .with_context(|| format!("sample {}", s.id))?;
                    if let Some(dir) = &args.maps {
                        write_feature_file(
                            &dir.join(format!("{name}.adwf")),
                            &[FeatureTensor::from_map(&map)?],
                        )?;
                    }
                    Ok(score)
                })
                .collect::<anyhow::Result<_>>()?
        }
        None => {
            if args.maps.is_some() {
                return Err(Invalid("--maps needs a trained model".into()).into());
            }
            let factory: Box<dyn DetectorFactory> = match cfg.detector {
                DetectorKind::Oracle => Box::new(OracleFactory),
                _ => Box::new(SyntheticGaussianFactory {
                    shift: cfg.synthetic.shift,
                }),
            };
            let records: Vec<SampleRecord> = samples
                .iter()
                .map(|s| SampleRecord {
                    sample_id: s.id.clone(),
                    object_id: s.id.clone(),
                    label: s.label,
                    image: PathBuf::from(safe_name(&s.id)),
                    mask: None,
                    defect_mask: None,
                })
                .collect();
            factory.train(&[], cfg.seed)?.score(&records)?
        }
    };
    let rows: Vec<ScoreRecord> = samples
        .iter()
        .zip(scores)
        .map(|(s, score)| ScoreRecord {
            sample_id: s.id.clone(),
            label: s.label,
            score,
        })
        .collect();
    write_text(&args.out, &write_scores_csv(&rows)?)?;
    finish("score", &cfg, inputs, outputs, &args.out, false)
}
