use std::path::PathBuf;

use adw_core::evalharness::{render_table, RiskReport, METRIC_NAMES};
use anyhow::Context;
use clap::Args;

use super::{finish, write_text};
use crate::svg::{fold_bars, roc_plot, score_histogram};
use crate::{GlobalArgs, RunConfig};

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// `report.json` written by `adw protocol`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Histogram bins.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

pub fn summary_markdown(report: &RiskReport) -> String {
    let mut s = format!(
        "# Risk report\n\nDetector: {}\n\nDataset: {}\n\nFolds: {} succeeded, {} failed (seed {}, {} criterion)\n\n",
        report.detector,
        report.config.dataset,
        report.folds.len(),
        report.failures.len(),
        report.config.seed,
        serde_json::to_value(report.config.criterion)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_else(|| "custom".into()),
    );
    s.push_str(&render_table(std::slice::from_ref(report)));
    s.push_str(&format!(
        "\n| Metric | Defined | Mean | Std | {:.0}% CI |\n|---|---|---|---|---|\n",
        100.0 * report.config.ci_level
    ));
    for name in METRIC_NAMES {
        if let Some(m) = report.summary.get(name) {
            let ci = match (m.ci_lower, m.ci_upper) {
                (Some(l), Some(u)) => format!("[{l:.4}, {u:.4}]"),
                _ => "n/a".into(),
            };
            s.push_str(&format!(
                "| {name} | {} | {} | {} | {ci} |\n",
                m.defined,
                opt(m.mean),
                opt(m.std)
            ));
        }
    }
    for f in &report.failures {
        s.push_str(&format!("\nFold {} failed: {}\n", f.fold, f.error));
    }
    s.push_str("\nPlots: roc.svg, scores.svg, folds.svg\n");
    s
}

pub fn cmd_report(
    args: &ReportArgs,
    cfg: RunConfig,
    _g: &GlobalArgs,
) -> anyhow::Result<Vec<PathBuf>> {
    let cfg = cfg.finalize();
    let text = std::fs::read_to_string(&args.report)
        .map_err(|e| adw_core::Error::io(&args.report, e))
        .context("reading report")?;
    let report: RiskReport = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a risk report", args.report.display()))?;
    let files = [
        ("roc.svg", roc_plot(&report)),
        ("scores.svg", score_histogram(&report, args.bins)),
        ("folds.svg", fold_bars(&report)),
        ("summary.md", summary_markdown(&report)),
    ];
    let mut outputs = Vec::new();
    for (name, body) in files {
        let p = args.out.join(name);
        write_text(&p, &body)?;
        outputs.push(p);
    }
    finish(
        "report",
        &cfg,
        vec![args.report.clone()],
        outputs,
        &args.out,
        true,
    )
}
