//! Classification metrics with `Dead` as the positive class.

use serde::{Deserialize, Serialize};

use crate::cohort::Label;
use crate::error::{Error, Result};

/// Standard F-beta, `(1 + b²)·p·r / (b²·p + r)`; 0 when both are 0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Dead predicted dead.
    pub tp: u64,
    /// Alive predicted dead.
    pub fp: u64,
    /// Dead predicted alive.
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Alive predicted alive.
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn from_labels(truth: &[Label], predicted: &[Label]) -> Self {
        let mut m = ConfusionMatrix::default();
        for (t, p) in truth.iter().zip(predicted) {
            match (t, p) {
                (Label::Dead, Label::Dead) => m.tp += 1,
                (Label::Alive, Label::Dead) => m.fp += 1,
                (Label::Dead, Label::Alive) => m.fn_ += 1,
                (Label::Alive, Label::Alive) => m.tn += 1,
            }
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// F-beta of one class, treating it as the positive class. A class with
    /// no predicted and no actual members scores 0.
    pub fn f_beta(&self, label: Label, beta: f64) -> f64 {
        let (tp, fp, fn_) = match label {
            Label::Dead => (self.tp, self.fp, self.fn_),
            Label::Alive => (self.tn, self.fn_, self.fp),
        };
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        f_beta(precision, recall, beta)
    }

    /// `[F2(alive), F2(dead)]`.
    pub fn f2_per_class(&self) -> [f64; 2] {
        [self.f_beta(Label::Alive, 2.0), self.f_beta(Label::Dead, 2.0)]
    }

    pub fn macro_f2(&self) -> f64 {
        let [a, d] = self.f2_per_class();
        (a + d) / 2.0
    }
}

/// Unweighted mean of the per-class F2 scores.
pub fn macro_f2(truth: &[Label], predicted: &[Label]) -> f64 {
    ConfusionMatrix::from_labels(truth, predicted).macro_f2()
}

/// Probability that a random dead sample outscores a random alive one,
/// ties counting one half, computed from mid-ranks.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput("scores and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|l| **l == Label::Dead).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput("ROC-AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid_rank = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] == Label::Dead).count();
        pos_rank_sum += mid_rank * tied_pos as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}
