//! Confusion-matrix metrics. Ratios with a zero denominator are reported as
//! `"undefined"` rather than 0.

use serde::{Deserialize, Serialize, Serializer};

pub(crate) fn undefined_marker<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("undefined"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Tallies one prediction against its label.
    pub fn add(&mut self, predicted_positive: bool, actual_positive: bool) {
        match (predicted_positive, actual_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfusionMetrics {
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    #[serde(serialize_with = "undefined_marker")]
    pub precision: Option<f64>,
    #[serde(serialize_with = "undefined_marker")]
    pub recall: Option<f64>,
    #[serde(serialize_with = "undefined_marker")]
    pub specificity: Option<f64>,
    #[serde(serialize_with = "undefined_marker")]
    pub accuracy: Option<f64>,
    #[serde(serialize_with = "undefined_marker")]
    pub f1: Option<f64>,
}

pub fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion_metrics(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionMetrics {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    ConfusionMetrics {
        counts: ConfusionCounts { tp, fp, tn, fn_ },
        precision,
        recall,
        specificity: ratio(tn, tn + fp),
        accuracy: ratio(tp + tn, tp + fp + tn + fn_),
        f1,
    }
}
