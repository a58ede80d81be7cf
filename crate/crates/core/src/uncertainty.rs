//! Reject option: a probability threshold at or below which a prediction is
//! withheld as uncertain.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cohort::Label;
use crate::error::{Error, Result};
use crate::tree::{Forest, Probabilities};

pub const DEFAULT_MAX_UNCERTAIN: f64 = 0.25;
pub const DEFAULT_N_THRESHOLDS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold: f64,
    /// Score over the samples kept when the threshold was selected.
    pub score: f64,
    /// Fraction of samples that were set aside to obtain `score`; 0 when
    /// no threshold beat the full-sample score.
    pub rejected_fraction: f64,
}

/// Searches `n` evenly spaced thresholds from the smallest to the largest
/// top-class probability for the one maximizing `score_fn` on the samples
/// whose top-class probability is strictly above it.
///
/// The scan stops as soon as a threshold would set aside `max_u` or more of
/// the samples; larger thresholds can only set aside more. A threshold
/// replaces the current best only on a strict score improvement, so among
/// equal scores the smallest threshold wins. The initial candidate is the
/// smallest top-class probability paired with the score on all samples.
pub fn find_uncertain_threshold<F>(
    labels: &[Label],
    probs: &[Probabilities],
    max_u: f64,
    n: usize,
    score_fn: F,
) -> Result<ThresholdResult>
where
    F: Fn(&[Label], &[Label]) -> f64,
{
    if labels.is_empty() || labels.len() != probs.len() {
        return Err(Error::InvalidInput(format!(
            "need matching non-empty labels and probabilities, got {} and {}",
            labels.len(),
            probs.len()
        )));
    }
    if !(max_u > 0.0 && max_u < 1.0) || n == 0 {
        return Err(Error::InvalidInput(format!("max_u {max_u} must be in (0, 1) and n {n} at least 1")));
    }

    let predicted: Vec<Label> = probs.iter().map(Probabilities::label).collect();
    let p_max: Vec<f64> = probs.iter().map(Probabilities::max).collect();
    let lo = p_max.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = p_max.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let delta = (hi - lo) / n as f64;
    let total = p_max.len() as f64;

    let mut best = ThresholdResult {
        threshold: lo,
        score: score_fn(labels, &predicted),
        rejected_fraction: 0.0,
    };
    let mut kept_truth = Vec::with_capacity(labels.len());
    let mut kept_pred = Vec::with_capacity(labels.len());

    for i in 0..n {
        let candidate = lo + i as f64 * delta;
        kept_truth.clear();
        kept_pred.clear();
        for ((&p, &t), &y) in p_max.iter().zip(labels).zip(&predicted) {
            if p > candidate {
                kept_truth.push(t);
                kept_pred.push(y);
            }
        }
        let uncertain = 1.0 - kept_truth.len() as f64 / total;
        if uncertain >= max_u {
            return Ok(best);
        }
        let score = score_fn(&kept_truth, &kept_pred);
        if score > best.score {
            best = ThresholdResult {
                threshold: candidate,
                score,
                rejected_fraction: uncertain,
            };
        }
        if delta == 0.0 {
            break;
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Triage {
    Alive,
    Dead,
    Uncertain,
}

impl Triage {
    pub fn as_str(self) -> &'static str {
        match self {
            Triage::Alive => "alive",
            Triage::Dead => "dead",
            Triage::Uncertain => "uncertain",
        }
    }

    pub fn label(self) -> Option<Label> {
        match self {
            Triage::Alive => Some(Label::Alive),
            Triage::Dead => Some(Label::Dead),
            Triage::Uncertain => None,
        }
    }
}

impl fmt::Display for Triage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriagePrediction {
    pub label: Triage,
    pub p_alive: f64,
    pub p_dead: f64,
    pub p_max: f64,
}

/// `Uncertain` iff the top-class probability is `<= threshold`.
pub fn triage(p: Probabilities, threshold: f64) -> TriagePrediction {
    let p_max = p.max();
    let label = if p_max <= threshold {
        Triage::Uncertain
    } else {
        match p.label() {
            Label::Alive => Triage::Alive,
            Label::Dead => Triage::Dead,
        }
    };
    TriagePrediction {
        label,
        p_alive: p.alive,
        p_dead: p.dead,
        p_max,
    }
}

pub fn apply_threshold(forest: &Forest, rows: &[Vec<Option<f64>>]) -> Result<Vec<TriagePrediction>> {
    let threshold = forest.threshold.ok_or(Error::MissingThreshold)?;
    rows.iter()
        .map(|r| Ok(triage(forest.predict_proba(r)?, threshold)))
        .collect()
}
