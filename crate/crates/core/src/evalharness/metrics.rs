use serde::{Deserialize, Serialize};

use crate::{Error, Label, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Classification metrics; `None` marks a metric whose denominator is zero
/// (serialized as `null`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub counts: ConfusionCounts,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub balanced_accuracy: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl MetricSet {
    pub fn from_counts(c: ConfusionCounts) -> Self {
        let tpr = ratio(c.tp, c.tp + c.fn_);
        let tnr = ratio(c.tn, c.tn + c.fp);
        Self {
            counts: c,
            tpr,
            fpr: ratio(c.fp, c.fp + c.tn),
            precision: ratio(c.tp, c.tp + c.fp),
            recall: tpr,
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            accuracy: ratio(c.tp + c.tn, c.total()),
            balanced_accuracy: tpr.zip(tnr).map(|(a, b)| (a + b) / 2.0),
        }
    }

    /// Value by report name.
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "tpr" => self.tpr,
            "fpr" => self.fpr,
            "precision" => self.precision,
            "recall" => self.recall,
            "f1" => self.f1,
            "accuracy" => self.accuracy,
            "balanced_accuracy" => self.balanced_accuracy,
            _ => None,
        }
    }
}

pub fn confusion_metrics(pred: &[Label], truth: &[Label]) -> Result<MetricSet> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (p, t) in pred.iter().zip(truth) {
        match (p.is_anomalous(), t.is_anomalous()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(MetricSet::from_counts(c))
}
