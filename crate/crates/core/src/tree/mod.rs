//! Decision trees and the two randomized ensembles built from them.

mod forest;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::Label;
use crate::error::{Error, Result};

pub use forest::{fit, leaf_probability, learn_imputation, predict_label, Forest, Probabilities};
pub use split::{midpoint, Impurity, SplitCandidate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnsembleKind {
    /// Random Forest: exhaustive cut search over sampled features.
    #[serde(rename = "RF")]
    RandomForest,
    /// Extra Trees: one random cut per sampled feature.
    #[serde(rename = "ET")]
    ExtraTrees,
}

impl EnsembleKind {
    pub fn short(self) -> &'static str {
        match self {
            EnsembleKind::RandomForest => "RF",
            EnsembleKind::ExtraTrees => "ET",
        }
    }
}

impl fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for EnsembleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rf" | "random_forest" => Ok(EnsembleKind::RandomForest),
            "et" | "extra_trees" => Ok(EnsembleKind::ExtraTrees),
            other => Err(Error::InvalidInput(format!("ensemble kind must be RF or ET, got `{other}`"))),
        }
    }
}

/// How missing cells are filled before growing or querying trees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Imputation {
    Mean,
    Median,
    Constant(f64),
}

impl Imputation {
    pub const MISSING_MARKER: Imputation = Imputation::Constant(-1.0);
}

impl fmt::Display for Imputation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Imputation::Mean => f.write_str("mean"),
            Imputation::Median => f.write_str("median"),
            Imputation::Constant(c) => write!(f, "constant({c})"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitCriterion {
    #[default]
    Gini,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub kind: EnsembleKind,
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features examined at every node.
    pub max_features: usize,
    pub bootstrap: bool,
    pub imputation: Imputation,
    #[serde(default)]
    pub criterion: SplitCriterion,
    pub seed: u64,
}

impl HyperConfig {
    /// A single classical decision tree: every feature, no resampling.
    pub fn single_tree(width: usize) -> Self {
        HyperConfig {
            kind: EnsembleKind::RandomForest,
            n_trees: 1,
            max_depth: None,
            min_samples_leaf: 1,
            max_features: width,
            bootstrap: false,
            imputation: Imputation::MISSING_MARKER,
            criterion: SplitCriterion::Gini,
            seed: 0,
        }
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n_trees == 0 {
            return bad("n_trees must be at least 1".into());
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1".into());
        }
        if self.max_features == 0 || self.max_features > width {
            return bad(format!("max_features {} outside [1, {width}]", self.max_features));
        }
        if self.max_depth == Some(0) {
            return bad("max_depth must be at least 1".into());
        }
        Ok(())
    }
}

/// A tree node. Samples go left when `value <= cut`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, try_from = "NodeRepr")]
pub enum Node {
    Split {
        feature: usize,
        cut: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        /// Training samples reaching the leaf, `[alive, dead]`.
        counts: [u32; 2],
    },
}

// Flat shape for deserialization; avoids untagged buffering on deep trees.
#[derive(Deserialize)]
struct NodeRepr {
    feature: Option<usize>,
    cut: Option<f64>,
    left: Option<Box<Node>>,
    right: Option<Box<Node>>,
    counts: Option<[u32; 2]>,
}

impl TryFrom<NodeRepr> for Node {
    type Error = String;

    fn try_from(r: NodeRepr) -> std::result::Result<Self, String> {
        match r {
            NodeRepr {
                feature: Some(feature),
                cut: Some(cut),
                left: Some(left),
                right: Some(right),
                counts: None,
            } => Ok(Node::Split {
                feature,
                cut,
                left,
                right,
            }),
            NodeRepr {
                feature: None,
                cut: None,
                left: None,
                right: None,
                counts: Some(counts),
            } if counts[0] + counts[1] > 0 => Ok(Node::Leaf { counts }),
            _ => Err("node must be {feature, cut, left, right} or a non-empty {counts}".into()),
        }
    }
}

impl Node {
    pub fn leaf(&self, row: &[f64]) -> [u32; 2] {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { counts } => return *counts,
                Node::Split {
                    feature,
                    cut,
                    left,
                    right,
                } => node = if row[*feature] <= *cut { left } else { right },
            }
        }
    }

    /// Probability of `label` for a fully imputed row.
    pub fn probability(&self, row: &[f64], label: Label) -> f64 {
        leaf_probability(self.leaf(row), label)
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        match self {
            Node::Leaf { .. } => None,
            Node::Split {
                feature, left, right, ..
            } => Some(
                (*feature)
                    .max(left.max_feature().unwrap_or(0))
                    .max(right.max_feature().unwrap_or(0)),
            ),
        }
    }
}

/// Best exhaustive Gini split of `rows` over `candidate_features`, with
/// cuts at midpoints between consecutive distinct values. `None` when no
/// split lowers the impurity of the node.
pub fn best_split_rf(
    rows: &[Vec<f64>],
    labels: &[Label],
    candidate_features: &[usize],
) -> Option<SplitCandidate> {
    let data = to_node_data(rows, labels);
    let indices: Vec<usize> = (0..rows.len()).collect();
    split::best_split_exhaustive(&data, &indices, candidate_features, 1, &mut split::Scratch::default())
}

/// Extra-Trees split: for each candidate feature one cut drawn uniformly in
/// the open range of its values; the best couple by Gini wins.
pub fn best_split_et<R: rand::Rng + ?Sized>(
    rows: &[Vec<f64>],
    labels: &[Label],
    candidate_features: &[usize],
    rng: &mut R,
) -> Option<SplitCandidate> {
    let data = to_node_data(rows, labels);
    let indices: Vec<usize> = (0..rows.len()).collect();
    split::best_split_random(&data, &indices, candidate_features, 1, rng)
}

fn to_node_data(rows: &[Vec<f64>], labels: &[Label]) -> split::NodeData {
    let width = rows.first().map_or(0, Vec::len);
    let columns = (0..width)
        .map(|f| rows.iter().map(|r| r[f]).collect())
        .collect();
    let classes = labels.iter().map(|l| l.index() as u8).collect();
    split::NodeData::new(columns, classes)
}
