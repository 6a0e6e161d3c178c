use std::path::PathBuf;

use adw_core::dataprep::load_manifest;
use adw_core::evalharness::{
    render_table, run_protocol_partial, DetectorFactory, OracleFactory, SyntheticGaussianFactory,
};
use adw_core::pipeline::{DiscFactory, FlowFactory};
use clap::Args;

use super::{finish, write_text};
use crate::{DetectorKind, GlobalArgs, RunConfig};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.md";

#[derive(Debug, Clone, Args)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub detector: Option<DetectorKind>,
    /// Number of repeated splits K.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Output directory for `report.json` and `report.md`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs the protocol and writes the report. When a fold fails the partial
/// report (with its failure records) is still written before the error is
/// returned.
pub fn cmd_protocol(
    args: &ProtocolArgs,
    mut cfg: RunConfig,
    _g: &GlobalArgs,
) -> anyhow::Result<Vec<PathBuf>> {
    if let Some(d) = args.detector {
        cfg.detector = d;
    }
    if let Some(k) = args.folds {
        cfg.protocol.folds = k;
    }
    let cfg = cfg.finalize();
    let manifest = load_manifest(&args.manifest)?;
    let factory: Box<dyn DetectorFactory> = match cfg.detector {
        DetectorKind::Flow => Box::new(FlowFactory {
            manifest_root: manifest.root.clone(),
            features: cfg.features.clone(),
            detector: cfg.flow.clone(),
        }),
        DetectorKind::Discriminator => Box::new(DiscFactory {
            manifest_root: manifest.root.clone(),
            features: cfg.features.clone(),
            detector: cfg.discriminator.clone(),
        }),
        DetectorKind::Oracle => Box::new(OracleFactory),
        DetectorKind::SyntheticGaussian => Box::new(SyntheticGaussianFactory {
            shift: cfg.synthetic.shift,
        }),
    };
    let (report, failure) = run_protocol_partial(&manifest, factory.as_ref(), &cfg.protocol)?;
    let json_path = args.out.join(REPORT_JSON);
    let table_path = args.out.join(REPORT_TABLE);
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_text(&json_path, &json)?;
    write_text(&table_path, &render_table(std::slice::from_ref(&report)))?;
    let mut inputs = vec![args.manifest.clone()];
    if matches!(
        cfg.detector,
        DetectorKind::Flow | DetectorKind::Discriminator
    ) {
        inputs.extend(manifest.records.iter().map(|r| manifest.resolve(&r.image)));
    }
    let outputs = finish(
        "protocol",
        &cfg,
        inputs,
        vec![json_path, table_path],
        &args.out,
        true,
    )?;
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(outputs),
    }
}
