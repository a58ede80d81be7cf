//! Independent reference implementations shared by the integration tests
//! and the acceptance harness.

#![allow(dead_code)]

use num_rational::Ratio;
use rand::Rng;

use prognosis::cohort::Label;
use prognosis::tree::Probabilities;

pub fn label(dead: bool) -> Label {
    if dead {
        Label::Dead
    } else {
        Label::Alive
    }
}

/// Grid oracle for the threshold search: every grid point is scored up
/// front, then the answer is read off the prefix before the first point
/// whose rejected fraction reaches `max_u`.
pub fn threshold_oracle(
    labels: &[Label],
    probs: &[Probabilities],
    max_u: f64,
    n: usize,
    score_fn: impl Fn(&[Label], &[Label]) -> f64,
) -> (f64, f64) {
    let pred: Vec<Label> = probs
        .iter()
        .map(|p| if p.dead >= p.alive { Label::Dead } else { Label::Alive })
        .collect();
    let pmax: Vec<f64> = probs.iter().map(|p| p.alive.max(p.dead)).collect();
    let lo = pmax.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pmax.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let delta = (hi - lo) / n as f64;
    let steps = if delta == 0.0 { 1 } else { n };

    let grid: Vec<(f64, f64, f64)> = (0..steps)
        .map(|i| {
            let th = lo + i as f64 * delta;
            let keep: Vec<usize> = (0..pmax.len()).filter(|&k| pmax[k] > th).collect();
            let u = 1.0 - keep.len() as f64 / pmax.len() as f64;
            let t: Vec<Label> = keep.iter().map(|&k| labels[k]).collect();
            let p: Vec<Label> = keep.iter().map(|&k| pred[k]).collect();
            (th, u, score_fn(&t, &p))
        })
        .collect();

    let mut best = (score_fn(labels, &pred), lo);
    for &(th, u, s) in grid.iter().take_while(|g| g.1 < max_u) {
        let _ = u;
        if s > best.0 {
            best = (s, th);
        }
    }
    best
}

/// Weighted Gini of a two-way partition as an exact fraction.
fn partition_gini(left: [i128; 2], right: [i128; 2]) -> Ratio<i128> {
    let n = left[0] + left[1] + right[0] + right[1];
    let side = |c: [i128; 2]| {
        let m = c[0] + c[1];
        Ratio::new(m * m - c[0] * c[0] - c[1] * c[1], m * n)
    };
    side(left) + side(right)
}

fn node_gini(c: [i128; 2]) -> Ratio<i128> {
    let m = c[0] + c[1];
    Ratio::new(m * m - c[0] * c[0] - c[1] * c[1], m * m)
}

#[derive(Debug, PartialEq)]
pub struct OracleSplit {
    pub feature: usize,
    pub cut: f64,
    pub impurity: Ratio<i128>,
}

/// Brute force over every (feature, midpoint) pair. A split must lower
/// the parent impurity; ties keep the first feature, then the first cut.
pub fn split_oracle(rows: &[Vec<f64>], labels: &[Label], features: &[usize]) -> Option<OracleSplit> {
    let count = |pick: &dyn Fn(usize) -> bool| {
        let mut c = [0i128; 2];
        for (i, l) in labels.iter().enumerate() {
            if pick(i) {
                c[usize::from(*l == Label::Dead)] += 1;
            }
        }
        c
    };
    let parent = node_gini(count(&|_| true));
    let mut best: Option<OracleSplit> = None;
    let mut fs = features.to_vec();
    fs.sort_unstable();
    fs.dedup();
    for &f in &fs {
        let mut values: Vec<f64> = rows.iter().map(|r| if r[f] == 0.0 { 0.0 } else { r[f] }).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let mid = (w[0] + w[1]) / 2.0;
            let cut = if mid < w[1] && mid.is_finite() { mid } else { w[0] };
            let left = count(&|i| rows[i][f] <= cut);
            let right = count(&|i| rows[i][f] > cut);
            let g = partition_gini(left, right);
            if g < parent && best.as_ref().map_or(true, |b| g < b.impurity) {
                best = Some(OracleSplit {
                    feature: f,
                    cut,
                    impurity: g,
                });
            }
        }
    }
    best
}

/// Probability that a random dead sample outscores a random alive one,
/// ties counting one half.
pub fn auc_concordance(scores: &[f64], labels: &[Label]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if li != Label::Dead {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != Label::Alive {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Random probability pairs, some drawn from a coarse grid to force ties.
pub fn random_probs<R: Rng>(rng: &mut R, n: usize) -> Vec<Probabilities> {
    let coarse = rng.random_bool(0.5);
    (0..n)
        .map(|_| {
            let d = if coarse {
                f64::from(rng.random_range(0..=20u32)) / 20.0
            } else {
                rng.random::<f64>()
            };
            Probabilities::new(1.0 - d, d)
        })
        .collect()
}

pub fn random_labels<R: Rng>(rng: &mut R, n: usize) -> Vec<Label> {
    let p = rng.random_range(0.05..0.95);
    (0..n).map(|_| label(rng.random_bool(p))).collect()
}
