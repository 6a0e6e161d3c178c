use std::path::{Path, PathBuf};

use adw_core::dataprep::load_manifest;
use adw_core::features::{write_features, FeatureExtractor};
use adw_core::pipeline::{record_features, FeatureConfig};
use adw_core::Label;
use anyhow::Context;
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{finish, unique_names, write_text};
use crate::{GlobalArgs, Invalid, RunConfig};

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Zero background pixels with each record's mask before extraction.
    #[arg(long)]
    pub mask_inputs: bool,
}

/// Contents of a feature directory: the extraction settings and one
/// feature file per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureIndex {
    pub features: FeatureConfig,
    pub records: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub sample_id: String,
    pub object_id: String,
    pub label: Label,
    /// Relative to the feature directory.
    pub file: PathBuf,
}

pub fn load_index(dir: &Path) -> anyhow::Result<FeatureIndex> {
    let path = dir.join(INDEX_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| adw_core::Error::io(&path, e))
        .with_context(|| format!("{} is not a feature directory", dir.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn cmd_features(
    args: &FeaturesArgs,
    mut cfg: RunConfig,
    g: &GlobalArgs,
) -> anyhow::Result<Vec<PathBuf>> {
    cfg.features.mask_inputs |= args.mask_inputs;
    let cfg = cfg.finalize();
    let manifest = load_manifest(&args.manifest)?;
    let extractor = FeatureExtractor::new(cfg.features.extractor.clone())?;
    let index_path = args.out.join(INDEX_FILE);
    if !g.force && index_path.is_file() {
        let old = load_index(&args.out)?;
        if old.features != cfg.features {
            return Err(Invalid(format!(
                "{} holds features extracted with a different configuration; rerun with --force",
                args.out.display()
            ))
            .into());
        }
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let names = unique_names(manifest.records.iter().map(|r| r.sample_id.as_str()))?;
    let entries = manifest
        .records
        .par_iter()
        .zip(&names)
        .map(|(r, name)| {
            let file = PathBuf::from(format!("{name}.adwf"));
            let path = args.out.join(&file);
            if g.force || !path.is_file() {
                let f = record_features(&manifest, r, &extractor, cfg.features.mask_inputs)
                    .with_context(|| format!("sample {}", r.sample_id))?;
                write_features(&path, &f)?;
            }
            Ok(IndexEntry {
                sample_id: r.sample_id.clone(),
                object_id: r.object_id.clone(),
                label: r.label,
                file,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let index = FeatureIndex {
        features: cfg.features.clone(),
        records: entries,
    };
    let mut text = serde_json::to_string_pretty(&index)?;
    text.push('\n');
    if std::fs::read_to_string(&index_path).ok().as_deref() != Some(text.as_str()) {
        write_text(&index_path, &text)?;
    }

    let mut outputs = vec![index_path];
    outputs.extend(index.records.iter().map(|e| args.out.join(&e.file)));
    let mut inputs = vec![args.manifest.clone()];
    inputs.extend(manifest.records.iter().map(|r| manifest.resolve(&r.image)));
    if cfg.features.mask_inputs {
        inputs.extend(
            manifest
                .records
                .iter()
                .filter_map(|r| r.mask.as_ref())
                .map(|m| manifest.resolve(m)),
        );
    }
    finish("features", &cfg, inputs, outputs, &args.out, true)
}
