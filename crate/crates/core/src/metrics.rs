//! Binary classification metrics: F1-macro, ROC AUC and validation
//! threshold search. Anomalies are the positive class; a node is predicted
//! anomalous iff its score is `>=` the threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{nullable, NonFinite, Report};

/// Candidate thresholds `0.05, 0.10, ..., 0.95`.
pub fn threshold_grid() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(labels: &[bool], predicted: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&y, &p) in labels.iter().zip(predicted) {
            match (y, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    // F1 of one class given its true positives and the two error counts.
    // A class that is neither present nor predicted scores 1.
    fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    }

    /// `[normal, anomalous]`
    pub fn per_class_f1(&self) -> [f64; 2] {
        [
            Self::f1(self.tn, self.fn_, self.fp),
            Self::f1(self.tp, self.fp, self.fn_),
        ]
    }

    pub fn f1_macro(&self) -> f64 {
        let [a, b] = self.per_class_f1();
        (a + b) / 2.0
    }

    fn ratio(num: usize, denom: usize) -> f64 {
        if denom == 0 {
            f64::NAN
        } else {
            num as f64 / denom as f64
        }
    }

    /// `[normal, anomalous]`; NaN when nothing was predicted for a class.
    pub fn precision(&self) -> [f64; 2] {
        [
            Self::ratio(self.tn, self.tn + self.fn_),
            Self::ratio(self.tp, self.tp + self.fp),
        ]
    }

    /// `[normal, anomalous]`; NaN when a class is absent.
    pub fn recall(&self) -> [f64; 2] {
        [
            Self::ratio(self.tn, self.tn + self.fp),
            Self::ratio(self.tp, self.tp + self.fn_),
        ]
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, found: b });
    }
    Ok(())
}

/// Unweighted mean of the two per-class F1 scores.
pub fn f1_macro(labels: &[bool], predicted: &[bool]) -> Result<f64> {
    check_lengths(labels.len(), predicted.len())?;
    Ok(Confusion::from_predictions(labels, predicted).f1_macro())
}

/// Area under the ROC curve via the Mann–Whitney rank statistic with
/// midranks for ties.
pub fn auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check_lengths(labels.len(), scores.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (1-based start+1..=end) share their mean.
        let midrank = (start + 1 + end) as f64 / 2.0;
        let pos_in_tie = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum_pos += midrank * pos_in_tie as f64;
        start = end;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

pub fn predict(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= threshold).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub f1_macro: f64,
}

/// Best F1-macro threshold on the 0.05 grid; ties go to the threshold
/// closest to 0.5, then to the lower one.
pub fn threshold_search(labels: &[bool], scores: &[f64]) -> Result<ThresholdChoice> {
    check_lengths(labels.len(), scores.len())?;
    if !labels.iter().any(|&y| y) || labels.iter().all(|&y| y) {
        return Err(Error::invalid("threshold search needs both classes"));
    }
    let mut grid: Vec<usize> = (1..20).collect();
    grid.sort_by_key(|&k| (k.abs_diff(10), k));
    let mut best: Option<ThresholdChoice> = None;
    for k in grid {
        let t = k as f64 / 20.0;
        let f1 = f1_macro(labels, &predict(scores, t))?;
        if best.map_or(true, |b| f1 > b.f1_macro) {
            best = Some(ThresholdChoice { threshold: t, f1_macro: f1 });
        }
    }
    Ok(best.unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(with = "nullable")]
    pub f1_macro: f64,
    #[serde(with = "nullable")]
    pub auc: f64,
    pub threshold: f64,
    /// `[normal, anomalous]`
    #[serde(with = "nullable::array2")]
    pub precision: [f64; 2],
    /// `[normal, anomalous]`
    #[serde(with = "nullable::array2")]
    pub recall: [f64; 2],
    pub confusion: Confusion,
}

impl MetricsReport {
    /// Scores `scores` at `threshold`. AUC is NaN when a class is missing.
    pub fn evaluate(labels: &[bool], scores: &[f64], threshold: f64) -> Result<Self> {
        check_lengths(labels.len(), scores.len())?;
        let confusion = Confusion::from_predictions(labels, &predict(scores, threshold));
        let auc = match auc(labels, scores) {
            Ok(v) => v,
            Err(Error::Invalid(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        Ok(Self {
            f1_macro: confusion.f1_macro(),
            auc,
            threshold,
            precision: confusion.precision(),
            recall: confusion.recall(),
            confusion,
        })
    }
}

impl NonFinite for MetricsReport {
    fn has_nonfinite(&self) -> bool {
        self.f1_macro.has_nonfinite()
            || self.auc.has_nonfinite()
            || self.precision.has_nonfinite()
            || self.recall.has_nonfinite()
    }
}

impl Report for MetricsReport {
    const KIND: &'static str = "metrics_report";
}
