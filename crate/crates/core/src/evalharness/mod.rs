//! ROC analysis, threshold selection, classification metrics and the
//! repeated three-way-split risk-estimation protocol.

mod bootstrap;
mod diagnostics;
mod metrics;
mod protocol;
mod roc;
mod scores;

pub use bootstrap::{bootstrap_ci, quantile};
pub use diagnostics::{background_score_fraction, localization_overlap};
pub use metrics::{confusion_metrics, ConfusionCounts, MetricSet};
pub use protocol::{
    render_table, run_protocol, run_protocol_partial, Detector, DetectorFactory, FoldFailure,
    FoldReport, MetricSummary, OracleFactory, ProtocolConfig, RiskReport, SyntheticGaussianFactory,
    METRIC_NAMES,
};
pub use roc::{
    auroc, classify, roc_curve, select_threshold, RocCurve, RocPoint, ThresholdCriterion,
    ThresholdRule,
};
pub use scores::{read_scores_csv, write_scores_csv, ScoreRecord};

/// Serializes a possibly infinite threshold as a JSON number, or as the
/// strings `"+inf"` / `"-inf"`.
pub(crate) mod serde_threshold {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("+inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "+inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad threshold {s:?}"))),
        }
    }
}
