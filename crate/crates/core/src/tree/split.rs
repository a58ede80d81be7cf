//! Node split search.
//!
//! Impurities are kept as exact rationals over integer class counts so
//! equal-quality splits compare equal and the tie rule (lowest feature,
//! then lowest cut) is applied deterministically.

use std::cmp::Ordering;

use rand::Rng;

/// Weighted Gini impurity of a binary split, `num / den` exactly.
#[derive(Clone, Copy, Debug)]
pub struct Impurity {
    pub num: u128,
    pub den: u128,
}

impl Impurity {
    /// Gini impurity of a single node with class counts `c`.
    pub fn node(c: [u64; 2]) -> Self {
        let n = u128::from(c[0] + c[1]);
        let sq = u128::from(c[0]).pow(2) + u128::from(c[1]).pow(2);
        Impurity {
            num: n * n - sq,
            den: n * n,
        }
    }

    /// `sum_child (n_child / n) * gini(child)` for a two-way split.
    pub fn split(left: [u64; 2], right: [u64; 2]) -> Self {
        let nl = u128::from(left[0] + left[1]);
        let nr = u128::from(right[0] + right[1]);
        let n = nl + nr;
        let sl = u128::from(left[0]).pow(2) + u128::from(left[1]).pow(2);
        let sr = u128::from(right[0]).pow(2) + u128::from(right[1]).pow(2);
        let den = n * nl * nr;
        Impurity {
            num: den - sl * nr - sr * nl,
            den,
        }
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialEq for Impurity {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Impurity {}

impl PartialOrd for Impurity {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Impurity {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub cut: f64,
    pub impurity: Impurity,
}

impl SplitCandidate {
    /// Lower impurity wins; ties go to the lower feature index, then the
    /// lower cut.
    fn beats(&self, other: &SplitCandidate) -> bool {
        match self.impurity.cmp(&other.impurity) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => (self.feature, self.cut) < (other.feature, other.cut),
        }
    }
}

fn keep_best(best: &mut Option<SplitCandidate>, cand: SplitCandidate) {
    if best.as_ref().map_or(true, |b| cand.beats(b)) {
        *best = Some(cand);
    }
}

/// Cut between two consecutive distinct values `a < b`, guaranteed to
/// satisfy `a <= cut < b`.
pub fn midpoint(a: f64, b: f64) -> f64 {
    let m = (a + b) / 2.0;
    if m >= b || !m.is_finite() {
        a
    } else {
        m
    }
}

/// Training matrix used while growing trees: imputed columns plus, per
/// feature, the dense rank of every value among the column's distinct
/// values.
pub(crate) struct NodeData {
    /// Column-major feature values, fully imputed.
    pub columns: Vec<Vec<f64>>,
    pub ranks: Vec<Vec<u32>>,
    /// Sorted distinct values per column; `uniques[f][ranks[f][i]] == columns[f][i]`.
    pub uniques: Vec<Vec<f64>>,
    /// Class index per row (0 = alive, 1 = dead).
    pub classes: Vec<u8>,
}

impl NodeData {
    pub fn new(mut columns: Vec<Vec<f64>>, classes: Vec<u8>) -> Self {
        // -0.0 and 0.0 compare equal under `<=` and must share a rank.
        for v in columns.iter_mut().flatten() {
            if *v == 0.0 {
                *v = 0.0;
            }
        }
        let (ranks, uniques) = columns
            .iter()
            .map(|col| {
                let mut uniq = col.clone();
                uniq.sort_unstable_by(f64::total_cmp);
                uniq.dedup();
                let ranks = col
                    .iter()
                    .map(|v| uniq.partition_point(|u| u.total_cmp(v).is_lt()) as u32)
                    .collect();
                (ranks, uniq)
            })
            .unzip();
        NodeData {
            columns,
            ranks,
            uniques,
            classes,
        }
    }
}

pub(crate) fn class_counts(data: &NodeData, indices: &[usize]) -> [u64; 2] {
    let mut c = [0u64; 2];
    for &i in indices {
        c[data.classes[i] as usize] += 1;
    }
    c
}

/// Reusable buffers for [`best_split_exhaustive`].
#[derive(Default)]
pub(crate) struct Scratch {
    keys: Vec<u32>,
    hist: Vec<[u64; 2]>,
}

/// Exhaustive search over midpoints between consecutive distinct values of
/// every candidate feature. `None` when no admissible split lowers the
/// node impurity.
pub(crate) fn best_split_exhaustive(
    data: &NodeData,
    indices: &[usize],
    candidate_features: &[usize],
    min_leaf: usize,
    scratch: &mut Scratch,
) -> Option<SplitCandidate> {
    let total = class_counts(data, indices);
    let parent = Impurity::node(total);
    let n = indices.len();
    let mut best: Option<SplitCandidate> = None;

    // Offers the cut between ranks `r < next` with `left` samples at or below `r`.
    let mut offer = |f: usize, r: u32, next: u32, left: [u64; 2]| {
        let n_left = (left[0] + left[1]) as usize;
        if n_left < min_leaf || n - n_left < min_leaf {
            return;
        }
        let right = [total[0] - left[0], total[1] - left[1]];
        let uniq = &data.uniques[f];
        keep_best(
            &mut best,
            SplitCandidate {
                feature: f,
                cut: midpoint(uniq[r as usize], uniq[next as usize]),
                impurity: Impurity::split(left, right),
            },
        );
    };

    for &f in candidate_features {
        let ranks = &data.ranks[f];
        let n_distinct = data.uniques[f].len();
        if n_distinct <= 2 * n {
            // Few distinct values: class histogram per rank.
            let hist = &mut scratch.hist;
            hist.clear();
            hist.resize(n_distinct, [0, 0]);
            for &i in indices {
                hist[ranks[i] as usize][data.classes[i] as usize] += 1;
            }
            let mut left = [0u64; 2];
            let mut prev: Option<u32> = None;
            for (r, c) in hist.iter().enumerate() {
                if c[0] + c[1] == 0 {
                    continue;
                }
                if let Some(p) = prev {
                    offer(f, p, r as u32, left);
                }
                left[0] += c[0];
                left[1] += c[1];
                prev = Some(r as u32);
            }
        } else {
            let keys = &mut scratch.keys;
            keys.clear();
            keys.extend(indices.iter().map(|&i| (ranks[i] << 1) | u32::from(data.classes[i])));
            keys.sort_unstable();
            let mut left = [0u64; 2];
            for i in 0..n - 1 {
                left[(keys[i] & 1) as usize] += 1;
                let (r, next) = (keys[i] >> 1, keys[i + 1] >> 1);
                if r != next {
                    offer(f, r, next, left);
                }
            }
        }
    }
    best.filter(|b| b.impurity < parent)
}

/// Extra-Trees search: one uniform cut in the open interval `(min, max)` of
/// each candidate feature, best of the resulting couples. Features whose
/// values are constant on the node contribute nothing.
pub(crate) fn best_split_random<R: Rng + ?Sized>(
    data: &NodeData,
    indices: &[usize],
    candidate_features: &[usize],
    min_leaf: usize,
    rng: &mut R,
) -> Option<SplitCandidate> {
    let total = class_counts(data, indices);
    let mut best: Option<SplitCandidate> = None;

    for &f in candidate_features {
        let col = &data.columns[f];
        let (lo, hi) = indices
            .iter()
            .map(|&i| col[i])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !(lo < hi) {
            continue;
        }
        let u: f64 = rng.random();
        let mut cut = lo + u * (hi - lo);
        if !(cut > lo && cut < hi) {
            cut = midpoint(lo, hi);
        }
        let mut left = [0u64; 2];
        for &i in indices {
            if col[i] <= cut {
                left[data.classes[i] as usize] += 1;
            }
        }
        let n_left = (left[0] + left[1]) as usize;
        if n_left < min_leaf || indices.len() - n_left < min_leaf {
            continue;
        }
        let right = [total[0] - left[0], total[1] - left[1]];
        keep_best(
            &mut best,
            SplitCandidate {
                feature: f,
                cut,
                impurity: Impurity::split(left, right),
            },
        );
    }
    best
}
