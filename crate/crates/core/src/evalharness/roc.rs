use serde::{Deserialize, Serialize};

use crate::{Error, Label, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Samples with `score > threshold` are predicted anomalous.
    #[serde(with = "super::serde_threshold")]
    pub threshold: f64,
    pub fp: usize,
    pub tp: usize,
    pub fpr: f64,
    pub tpr: f64,
}

/// Empirical ROC curve from `+inf` (nothing flagged) to `-inf` (everything
/// flagged), with one interior point per gap between distinct scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub positives: usize,
    pub negatives: usize,
    pub points: Vec<RocPoint>,
}

fn check_scores(scores: &[f64], labels: &[Label]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {i}")));
    }
    let p = labels.iter().filter(|l| l.is_anomalous()).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::Insufficient(
            "ROC analysis needs both classes".into(),
        ));
    }
    Ok((p, n))
}

/// Threshold strictly between `hi > lo`; falls back to `lo` when the two
/// are adjacent floats and the midpoint rounds onto `hi`.
fn between(hi: f64, lo: f64) -> f64 {
    let mid = hi / 2.0 + lo / 2.0;
    if mid < hi && mid >= lo {
        mid
    } else {
        lo
    }
}

pub fn roc_curve(scores: &[f64], labels: &[Label]) -> Result<RocCurve> {
    let (p, n) = check_scores(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let point = |threshold, fp: usize, tp: usize| RocPoint {
        threshold,
        fp,
        tp,
        fpr: fp as f64 / n as f64,
        tpr: tp as f64 / p as f64,
    };
    let mut points = vec![point(f64::INFINITY, 0, 0)];
    let (mut fp, mut tp) = (0, 0);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]].is_anomalous() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let threshold = if i < idx.len() {
            between(s, scores[idx[i]])
        } else {
            f64::NEG_INFINITY
        };
        points.push(point(threshold, fp, tp));
    }
    Ok(RocCurve {
        positives: p,
        negatives: n,
        points,
    })
}

/// Area under the ROC curve by the trapezoid rule, evaluated in integer
/// counts so that it equals the pairwise estimator
/// `P(pos > neg) + P(tie) / 2` exactly.
pub fn auroc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let c = roc_curve(scores, labels)?;
    Ok(curve_auroc(&c))
}

pub(crate) fn curve_auroc(c: &RocCurve) -> f64 {
    let twice: u128 = c
        .points
        .windows(2)
        .map(|w| ((w[1].fp - w[0].fp) as u128) * ((w[0].tp + w[1].tp) as u128))
        .sum();
    twice as f64 / (2 * c.positives as u128 * c.negatives as u128) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ThresholdCriterion {
    /// argmax tpr - fpr.
    #[default]
    Youden,
    /// argmax tpr * (1 - fpr), sensitivity times specificity.
    SensitivitySpecificityTradeoff,
    /// argmin c_fp fpr pi_neg + c_fn (1 - tpr) pi_pos, with class priors
    /// taken from the curve.
    CostBased { c_fp: f64, c_fn: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub criterion: ThresholdCriterion,
    #[serde(with = "super::serde_threshold")]
    pub tau: f64,
    /// Index of the chosen point on the curve.
    pub point: usize,
}

/// Optimal operating point. Ties go to the smaller fpr, then the larger
/// threshold, which is the first optimum along the curve.
pub fn select_threshold(curve: &RocCurve, criterion: ThresholdCriterion) -> Result<ThresholdRule> {
    if curve.points.is_empty() {
        return Err(Error::Insufficient("empty ROC curve".into()));
    }
    let (p, n) = (curve.positives as i128, curve.negatives as i128);
    let best = match criterion {
        ThresholdCriterion::Youden => first_max(curve, |pt| pt.tp as i128 * n - pt.fp as i128 * p),
        ThresholdCriterion::SensitivitySpecificityTradeoff => {
            first_max(curve, |pt| pt.tp as i128 * (n - pt.fp as i128))
        }
        ThresholdCriterion::CostBased { c_fp, c_fn } => {
            if !(c_fp.is_finite() && c_fn.is_finite() && c_fp >= 0.0 && c_fn >= 0.0) {
                return Err(Error::InvalidArgument(
                    "costs must be finite and >= 0".into(),
                ));
            }
            let total = (p + n) as f64;
            let cost = |pt: &RocPoint| {
                (c_fp * pt.fp as f64 + c_fn * (curve.positives - pt.tp) as f64) / total
            };
            let mut best = 0;
            for (i, pt) in curve.points.iter().enumerate() {
                if cost(pt) < cost(&curve.points[best]) {
                    best = i;
                }
            }
            best
        }
    };
    Ok(ThresholdRule {
        criterion,
        tau: curve.points[best].threshold,
        point: best,
    })
}

fn first_max(curve: &RocCurve, key: impl Fn(&RocPoint) -> i128) -> usize {
    let mut best = 0;
    for (i, pt) in curve.points.iter().enumerate() {
        if key(pt) > key(&curve.points[best]) {
            best = i;
        }
    }
    best
}

/// Anomalous iff `score > tau`.
pub fn classify(scores: &[f64], tau: f64) -> Vec<Label> {
    scores
        .iter()
        .map(|&s| {
            if s > tau {
                Label::Anomalous
            } else {
                Label::Nominal
            }
        })
        .collect()
}
