use std::path::{Path, PathBuf};

use adw_core::checkpoint::{save_checkpoint, Checkpoint, Model};
use adw_core::features::read_features;
use adw_core::pipeline::{
    DiscDetectorConfig, DiscModel, FeatureConfig, FlowDetectorConfig, FlowModel,
};
use anyhow::Context;
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{finish, load_index, write_text, INDEX_FILE};
use crate::{DetectorKind, GlobalArgs, Invalid, RunConfig};

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Directory written by `adw features`.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum)]
    pub detector: Option<DetectorKind>,
    /// Checkpoint path; the loss history goes to `<out>.loss.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
}

/// JSON stored in a checkpoint's metadata string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub detector: DetectorKind,
    pub features: FeatureConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowDetectorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discriminator: Option<DiscDetectorConfig>,
    pub seed: u64,
    pub train_samples: usize,
}

/// Sibling file holding the background flow of a likelihood-ratio model.
pub fn background_path(model: &Path) -> PathBuf {
    let mut name = model.file_name().unwrap_or_default().to_os_string();
    name.push(".background");
    model.with_file_name(name)
}

fn loss_path(model: &Path) -> PathBuf {
    let mut name = model.file_name().unwrap_or_default().to_os_string();
    name.push(".loss.csv");
    model.with_file_name(name)
}

pub fn cmd_train(
    args: &TrainArgs,
    mut cfg: RunConfig,
    _g: &GlobalArgs,
) -> anyhow::Result<Vec<PathBuf>> {
    if let Some(d) = args.detector {
        cfg.detector = d;
    }
    if let Some(e) = args.epochs {
        cfg.flow.train.epochs = e;
        cfg.discriminator.epochs = e;
    }
    let cfg = cfg.finalize();
    if !cfg.detector.is_trainable() {
        return Err(Invalid(format!(
            "detector {} has nothing to train",
            cfg.detector.as_str()
        ))
        .into());
    }
    let index = load_index(&args.features)?;
    let nominal: Vec<_> = index
        .records
        .iter()
        .filter(|e| !e.label.is_anomalous())
        .collect();
    if nominal.is_empty() {
        return Err(
            adw_core::Error::Insufficient("no nominal feature files to train on".into()).into(),
        );
    }
    let files: Vec<PathBuf> = nominal
        .iter()
        .map(|e| args.features.join(&e.file))
        .collect();
    let feats = files
        .par_iter()
        .zip(&nominal)
        .map(|(p, e)| read_features(p).with_context(|| format!("sample {}", e.sample_id)))
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut meta = ModelMeta {
        detector: cfg.detector,
        features: index.features.clone(),
        flow: None,
        discriminator: None,
        seed: cfg.seed,
        train_samples: feats.len(),
    };
    let mut outputs = vec![args.out.clone()];
    let (model, normalizer, losses) = match cfg.detector {
        DetectorKind::Flow => {
            let (m, h) = FlowModel::fit(&feats, &cfg.flow, cfg.seed)?;
            meta.flow = Some(cfg.flow.clone());
            if let Some(bg) = m.background {
                let p = background_path(&args.out);
                save_checkpoint(
                    &p,
                    &Checkpoint {
                        model: Model::Flow(bg),
                        normalizer: None,
                        metadata: String::new(),
                    },
                )?;
                outputs.push(p);
            }
            let mut losses = vec![h.initial_loss];
            losses.extend(h.epoch_loss);
            (Model::Flow(m.flow), m.normalizer, losses)
        }
        _ => {
            let (m, h) = DiscModel::fit(&feats, &cfg.discriminator, cfg.seed)?;
            meta.discriminator = Some(cfg.discriminator.clone());
            let mut losses = vec![f64::NAN];
            losses.extend(h.epoch_loss);
            (Model::Discriminator(m.model), m.normalizer, losses)
        }
    };
    save_checkpoint(
        &args.out,
        &Checkpoint {
            model,
            normalizer: Some(normalizer),
            metadata: serde_json::to_string(&meta)?,
        },
    )?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        if l.is_finite() {
            csv.push_str(&format!("{i},{l}\n"));
        }
    }
    let lp = loss_path(&args.out);
    write_text(&lp, &csv)?;
    outputs.push(lp);

    let mut inputs = vec![args.features.join(INDEX_FILE)];
    inputs.extend(files);
    finish("train", &cfg, inputs, outputs, &args.out, false)
}
