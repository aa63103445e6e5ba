//! Binary classification metrics with anomaly as the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// TP / (TP + FN); `None` without positives.
    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// FP / (FP + TN); `None` without negatives.
    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn check_binary(labels: &[u8], other: usize) -> Result<()> {
    if labels.len() != other {
        return Err(Error::Argument(format!(
            "{} labels but {other} predictions/scores",
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Argument("no samples".into()));
    }
    if let Some(v) = labels.iter().find(|&&v| v > 1) {
        return Err(Error::Argument(format!("label {v} is not 0 or 1")));
    }
    Ok(())
}

pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionMatrix> {
    check_binary(labels, predictions.len())?;
    check_binary(predictions, labels.len())?;
    let mut m = ConfusionMatrix::default();
    for (&l, &p) in labels.iter().zip(predictions) {
        match (l, p) {
            (1, 1) => m.tp += 1,
            (0, 1) => m.fp += 1,
            (1, 0) => m.fn_ += 1,
            _ => m.tn += 1,
        }
    }
    Ok(m)
}

/// Mann–Whitney AUROC: the fraction of (positive, negative) pairs where the
/// positive scores higher, ties counting one half. Computed from midranks in
/// `O(n log n)`.
pub fn auroc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    check_binary(labels, scores.len())?;
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Argument(format!("score {s} is not comparable")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks (1-based) of the positives.
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let positives = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += midrank * positives as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Summary {
    /// Index 0 is the normal class, index 1 the anomalous class.
    pub per_class: Vec<ClassScores>,
    pub f1_macro: f64,
}

fn class_scores(tp: usize, fp: usize, fn_: usize) -> ClassScores {
    if tp + fp == 0 && tp + fn_ == 0 {
        return ClassScores {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let precision = ratio(tp, tp + fp).unwrap_or(0.0);
    let recall = ratio(tp, tp + fn_).unwrap_or(0.0);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassScores {
        precision,
        recall,
        f1,
    }
}

/// Per-class precision, recall and F1 for both classes, and their unweighted
/// mean. A class that is neither present nor predicted scores 1.
pub fn f1_macro(labels: &[u8], predictions: &[u8]) -> Result<F1Summary> {
    let m = confusion(labels, predictions)?;
    // For the normal class the roles of the off-diagonal cells swap.
    let normal = class_scores(m.tn, m.fn_, m.fp);
    let anomalous = class_scores(m.tp, m.fp, m.fn_);
    Ok(F1Summary {
        f1_macro: (normal.f1 + anomalous.f1) / 2.0,
        per_class: vec![normal, anomalous],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// `None` when the report was produced without training in the same run.
    pub train_seconds: Option<f64>,
    pub inference_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub auroc: f64,
    pub per_class: Vec<ClassScores>,
    pub f1_macro: f64,
    pub timings: Timings,
    pub peak_model_bytes: usize,
}

impl EvalReport {
    pub fn from_predictions(
        labels: &[u8],
        scores: &[f64],
        predictions: &[u8],
        timings: Timings,
        peak_model_bytes: usize,
    ) -> Result<Self> {
        let f1 = f1_macro(labels, predictions)?;
        Ok(Self {
            confusion: confusion(labels, predictions)?,
            auroc: auroc(labels, scores)?,
            per_class: f1.per_class,
            f1_macro: f1.f1_macro,
            timings,
            peak_model_bytes,
        })
    }

    /// True when every non-timing field matches.
    pub fn same_scores(&self, other: &EvalReport) -> bool {
        self.confusion == other.confusion
            && self.auroc == other.auroc
            && self.per_class == other.per_class
            && self.f1_macro == other.f1_macro
            && self.peak_model_bytes == other.peak_model_bytes
    }
}
