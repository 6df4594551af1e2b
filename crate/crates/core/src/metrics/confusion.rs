use serde::{Deserialize, Serialize};

use crate::annot::LabelGrid;
use crate::error::{Error, Result};

use super::auroc::auroc;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
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

    /// Swap the roles of the two classes.
    pub fn relabel(&self) -> Self {
        Self {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }
}

/// Counts over the cells where `mask` is set.
pub fn confusion_counts(pred: &[bool], truth: &[bool], mask: &[bool]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() || pred.len() != mask.len() {
        return Err(Error::Consistency(format!(
            "prediction ({}), labels ({}) and tissue mask ({}) differ in size",
            pred.len(),
            truth.len(),
            mask.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for ((&p, &t), _) in pred.iter().zip(truth).zip(mask).filter(|(_, &m)| m) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Confusion of a finest-grid binary map against clean labels, restricted
/// to in-tissue cells.
pub fn confusion(pred: &[bool], labels: &LabelGrid, in_tissue: &[bool]) -> Result<ConfusionCounts> {
    confusion_counts(pred, &labels.labels, in_tissue)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn precision(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fp)
}

pub fn recall(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fn_)
}

pub fn specificity(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tn, c.tn + c.fp)
}

fn mcc_factors(c: &ConfusionCounts) -> [u64; 4] {
    [c.tp + c.fp, c.tp + c.fn_, c.tn + c.fp, c.tn + c.fn_]
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let [a, b, d, e] = mcc_factors(c);
    if a == 0 || b == 0 || d == 0 || e == 0 {
        return 0.0;
    }
    let num = (c.tp as u128 * c.tn as u128) as i128 - (c.fp as u128 * c.fn_ as u128) as i128;
    let den = ((a as u128 * b as u128) as f64 * (d as u128 * e as u128) as f64).sqrt();
    (num as f64 / den).clamp(-1.0, 1.0)
}

/// Metrics of one slide. A metric is `None` when its denominator is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlideMetrics {
    pub slide_id: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub mcc: Option<f64>,
    pub auroc: Option<f64>,
    pub confusion: ConfusionCounts,
}

/// Thresholds `scores` (strictly above `threshold`) and computes all metrics
/// over cells where `in_tissue` is set.
pub fn evaluate_slide(
    slide_id: &str,
    scores: &[f64],
    truth: &[bool],
    in_tissue: &[bool],
    threshold: f64,
) -> Result<SlideMetrics> {
    let pred: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
    let c = confusion_counts(&pred, truth, in_tissue)?;
    let (s, l): (Vec<f64>, Vec<bool>) = scores
        .iter()
        .zip(truth)
        .zip(in_tissue)
        .filter(|(_, &m)| m)
        .map(|((&s, &t), _)| (s, t))
        .unzip();
    let mcc_defined = mcc_factors(&c).iter().all(|&f| f > 0);
    Ok(SlideMetrics {
        slide_id: slide_id.to_string(),
        precision: precision(&c),
        recall: recall(&c),
        specificity: specificity(&c),
        mcc: mcc_defined.then(|| mcc(&c)),
        auroc: auroc(&s, &l),
        confusion: c,
    })
}
