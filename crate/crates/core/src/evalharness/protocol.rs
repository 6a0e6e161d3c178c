use std::collections::BTreeMap;
use std::hash::Hasher;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bootstrap::{mean, std_dev};
use super::roc::curve_auroc;
use super::{
    bootstrap_ci, classify, confusion_metrics, roc_curve, select_threshold, MetricSet, ScoreRecord,
    ThresholdCriterion,
};
use crate::dataprep::{three_way_split, DatasetManifest, SampleRecord};
use crate::numerics::RngStream;
use crate::{Error, Label, Result};

/// A trained model that scores manifest records; larger is more anomalous.
pub trait Detector: Send + Sync {
    fn score(&self, records: &[SampleRecord]) -> Result<Vec<f64>>;
}

/// Trains a fresh detector for each fold.
pub trait DetectorFactory: Sync {
    fn name(&self) -> String;
    fn train(&self, train: &[SampleRecord], seed: u64) -> Result<Box<dyn Detector>>;
}

/// Scores 1 for anomalous records and 0 otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleFactory;

struct Oracle;

impl Detector for Oracle {
    fn score(&self, records: &[SampleRecord]) -> Result<Vec<f64>> {
        Ok(records
            .iter()
            .map(|r| r.label.is_anomalous() as u8 as f64)
            .collect())
    }
}

impl DetectorFactory for OracleFactory {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn train(&self, _train: &[SampleRecord], _seed: u64) -> Result<Box<dyn Detector>> {
        Ok(Box::new(Oracle))
    }
}

/// Label-aware synthetic scores: `N(0, 1)` for nominal records and
/// `N(shift, 1)` for anomalous ones, drawn afresh for every fold seed.
/// With `shift = 0` the scores carry no information.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticGaussianFactory {
    pub shift: f64,
}

impl Default for SyntheticGaussianFactory {
    fn default() -> Self {
        Self { shift: 2.0 }
    }
}

struct SyntheticGaussian {
    shift: f64,
    rng: RngStream,
}

fn id_key(id: &str) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(id.as_bytes());
    h.finish()
}

impl Detector for SyntheticGaussian {
    fn score(&self, records: &[SampleRecord]) -> Result<Vec<f64>> {
        Ok(records
            .iter()
            .map(|r| {
                let z = self.rng.fork(id_key(&r.sample_id)).normal();
                if r.label.is_anomalous() {
                    z + self.shift
                } else {
                    z
                }
            })
            .collect())
    }
}

impl DetectorFactory for SyntheticGaussianFactory {
    fn name(&self) -> String {
        format!("synthetic-gaussian(shift={})", self.shift)
    }

    fn train(&self, _train: &[SampleRecord], seed: u64) -> Result<Box<dyn Detector>> {
        Ok(Box::new(SyntheticGaussian {
            shift: self.shift,
            rng: RngStream::new(seed),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Number of repeated splits K.
    pub folds: usize,
    pub seed: u64,
    pub criterion: ThresholdCriterion,
    pub nominal_train_fraction: Option<f64>,
    pub ci_level: f64,
    pub bootstrap_resamples: usize,
    /// Dataset label for reports.
    pub dataset: String,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 0,
            criterion: ThresholdCriterion::Youden,
            nominal_train_fraction: None,
            ci_level: 0.95,
            bootstrap_resamples: 2000,
            dataset: "dataset".into(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds == 0 {
            return Err(Error::InvalidArgument("folds must be >= 1".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) || self.bootstrap_resamples == 0 {
            return Err(Error::InvalidArgument(
                "ci_level must lie in (0, 1) and bootstrap_resamples be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Seed of fold `k`.
    pub fn fold_seed(&self, k: usize) -> u64 {
        RngStream::new(self.seed).fork(k as u64).seed()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    #[serde(with = "super::serde_threshold")]
    pub tau: f64,
    pub auroc_threshold_part: f64,
    pub auroc_inference: f64,
    /// Metrics of the thresholded classifier on the inference partition.
    pub metrics: MetricSet,
    pub train_size: usize,
    pub threshold_size: usize,
    pub inference_scores: Vec<ScoreRecord>,
}

impl FoldReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "auroc_threshold_part" => Some(self.auroc_threshold_part),
            "auroc_inference" => Some(self.auroc_inference),
            other => self.metrics.get(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold: usize,
    pub error: String,
}

/// Aggregate over folds where the metric is defined. The interval is a
/// percentile bootstrap over fold values and needs at least two of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub defined: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub detector: String,
    pub config: ProtocolConfig,
    pub folds: Vec<FoldReport>,
    pub failures: Vec<FoldFailure>,
    pub summary: BTreeMap<String, MetricSummary>,
}

pub const METRIC_NAMES: [&str; 9] = [
    "auroc_threshold_part",
    "auroc_inference",
    "tpr",
    "fpr",
    "precision",
    "recall",
    "f1",
    "accuracy",
    "balanced_accuracy",
];

fn labels_of(records: &[SampleRecord]) -> Vec<Label> {
    records.iter().map(|r| r.label).collect()
}

fn run_fold(
    manifest: &DatasetManifest,
    factory: &dyn DetectorFactory,
    cfg: &ProtocolConfig,
    k: usize,
) -> Result<FoldReport> {
    let seed = cfg.fold_seed(k);
    let split = three_way_split(manifest, seed, cfg.nominal_train_fraction)?;
    let detector = factory.train(&split.train, seed)?;

    let thr_scores = detector.score(&split.threshold_part)?;
    let thr_labels = labels_of(&split.threshold_part);
    let curve = roc_curve(&thr_scores, &thr_labels)?;
    let rule = select_threshold(&curve, cfg.criterion)?;

    let inf_scores = detector.score(&split.inference_part)?;
    let inf_labels = labels_of(&split.inference_part);
    let inf_curve = roc_curve(&inf_scores, &inf_labels)?;
    let metrics = confusion_metrics(&classify(&inf_scores, rule.tau), &inf_labels)?;
    Ok(FoldReport {
        fold: k,
        seed,
        tau: rule.tau,
        auroc_threshold_part: curve_auroc(&curve),
        auroc_inference: curve_auroc(&inf_curve),
        metrics,
        train_size: split.train.len(),
        threshold_size: split.threshold_part.len(),
        inference_scores: split
            .inference_part
            .iter()
            .zip(&inf_scores)
            .map(|(r, &score)| ScoreRecord {
                sample_id: r.sample_id.clone(),
                label: r.label,
                score,
            })
            .collect(),
    })
}

fn summarize(
    folds: &[FoldReport],
    cfg: &ProtocolConfig,
) -> Result<BTreeMap<String, MetricSummary>> {
    let boot = RngStream::new(cfg.seed).fork(0xB0075);
    let mut out = BTreeMap::new();
    for (i, name) in METRIC_NAMES.iter().enumerate() {
        let vals: Vec<f64> = folds.iter().filter_map(|f| f.metric(name)).collect();
        let (lo, hi) = if vals.len() >= 2 {
            let (l, h) = bootstrap_ci(
                &vals,
                cfg.bootstrap_resamples,
                cfg.ci_level,
                &mut boot.fork(i as u64),
            )?;
            (Some(l), Some(h))
        } else {
            (None, None)
        };
        out.insert(
            name.to_string(),
            MetricSummary {
                defined: vals.len(),
                mean: (!vals.is_empty()).then(|| mean(&vals)),
                std: (!vals.is_empty()).then(|| std_dev(&vals)),
                ci_lower: lo,
                ci_upper: hi,
            },
        );
    }
    Ok(out)
}

/// Runs all folds (in parallel) and returns the report over the successful
/// ones together with the first failure, if any, as [`Error::Fold`].
pub fn run_protocol_partial(
    manifest: &DatasetManifest,
    factory: &dyn DetectorFactory,
    cfg: &ProtocolConfig,
) -> Result<(RiskReport, Option<Error>)> {
    cfg.validate()?;
    let results: Vec<Result<FoldReport>> = (0..cfg.folds)
        .into_par_iter()
        .map(|k| run_fold(manifest, factory, cfg, k))
        .collect();
    let mut folds = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(f) => folds.push(f),
            Err(e) => {
                failures.push(FoldFailure {
                    fold: k,
                    error: e.to_string(),
                });
                if first_error.is_none() {
                    first_error = Some(Error::Fold {
                        fold: k,
                        cause: Box::new(e),
                    });
                }
            }
        }
    }
    let summary = summarize(&folds, cfg)?;
    Ok((
        RiskReport {
            detector: factory.name(),
            config: cfg.clone(),
            folds,
            failures,
            summary,
        },
        first_error,
    ))
}

/// Repeated three-way-split risk estimation. Each fold splits with its own
/// seed, trains a fresh detector on the nominal train part, selects the
/// threshold on the threshold part and evaluates on the inference part.
pub fn run_protocol(
    manifest: &DatasetManifest,
    factory: &dyn DetectorFactory,
    cfg: &ProtocolConfig,
) -> Result<RiskReport> {
    match run_protocol_partial(manifest, factory, cfg)? {
        (report, None) => Ok(report),
        (_, Some(e)) => Err(e),
    }
}

fn cell(s: Option<&MetricSummary>) -> String {
    match s {
        Some(MetricSummary {
            mean: Some(m),
            ci_lower: Some(l),
            ci_upper: Some(u),
            ..
        }) => format!("{m:.3} [{l:.3}, {u:.3}]"),
        Some(MetricSummary { mean: Some(m), .. }) => format!("{m:.3}"),
        _ => "n/a".into(),
    }
}

/// Markdown table, one row per report: model, dataset and AUROC columns
/// followed by thresholded metrics, each as mean [CI].
pub fn render_table(reports: &[RiskReport]) -> String {
    let cols = [
        "auroc_threshold_part",
        "auroc_inference",
        "f1",
        "balanced_accuracy",
    ];
    let mut out = String::from(
        "| Model | Dataset | K | AUROC (threshold part) | AUROC (inference) | F1 | Balanced accuracy |\n\
         |---|---|---|---|---|---|---|\n",
    );
    for r in reports {
        out.push_str(&format!(
            "| {} | {} | {} |",
            r.detector,
            r.config.dataset,
            r.folds.len()
        ));
        for c in cols {
            out.push_str(&format!(" {} |", cell(r.summary.get(c))));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(anom: usize, nom: usize) -> DatasetManifest {
        let mut v = Vec::new();
        for i in 0..anom + nom {
            let label = if i < anom {
                Label::Anomalous
            } else {
                Label::Nominal
            };
            v.push(SampleRecord {
                sample_id: format!("s{i}"),
                object_id: format!("o{i}"),
                label,
                image: format!("s{i}.png").into(),
                mask: None,
                defect_mask: None,
            });
        }
        DatasetManifest::new("/x", v)
    }

    #[test]
    fn oracle_single_fold_is_perfect() {
        let cfg = ProtocolConfig {
            folds: 1,
            ..Default::default()
        };
        let r = run_protocol(&manifest(6, 12), &OracleFactory, &cfg).unwrap();
        let f = &r.folds[0];
        for name in METRIC_NAMES {
            let want = if name == "fpr" { 0.0 } else { 1.0 };
            assert_eq!(f.metric(name), Some(want), "{name}");
        }
        assert!(r.summary["f1"].ci_lower.is_none());
    }

    #[test]
    fn deterministic_json() {
        let cfg = ProtocolConfig {
            folds: 4,
            seed: 9,
            ..Default::default()
        };
        let m = manifest(10, 30);
        let a = serde_json::to_string(
            &run_protocol(&m, &SyntheticGaussianFactory::default(), &cfg).unwrap(),
        )
        .unwrap();
        let b = serde_json::to_string(
            &run_protocol(&m, &SyntheticGaussianFactory::default(), &cfg).unwrap(),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    struct Failing;

    impl DetectorFactory for Failing {
        fn name(&self) -> String {
            "failing".into()
        }

        fn train(&self, _t: &[SampleRecord], seed: u64) -> Result<Box<dyn Detector>> {
            if seed == ProtocolConfig::default().fold_seed(2) {
                Err(Error::Detector("boom".into()))
            } else {
                Ok(Box::new(Oracle))
            }
        }
    }

    #[test]
    fn fold_failure_reported() {
        let cfg = ProtocolConfig {
            folds: 4,
            ..Default::default()
        };
        let m = manifest(6, 12);
        match run_protocol(&m, &Failing, &cfg) {
            Err(Error::Fold { fold: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        let (r, e) = run_protocol_partial(&m, &Failing, &cfg).unwrap();
        assert!(e.is_some());
        assert_eq!(r.folds.len(), 3);
        assert_eq!(r.failures[0].fold, 2);
    }

    #[test]
    fn table_layout() {
        let cfg = ProtocolConfig {
            folds: 3,
            dataset: "toy".into(),
            ..Default::default()
        };
        let r = run_protocol(&manifest(6, 12), &OracleFactory, &cfg).unwrap();
        let t = render_table(&[r]);
        assert!(t
            .lines()
            .nth(2)
            .unwrap()
            .starts_with("| oracle | toy | 3 | 1.000 [1.000, 1.000]"));
    }
}
