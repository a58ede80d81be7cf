use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::split::{best_split_exhaustive, best_split_random, class_counts, NodeData, Scratch};
use super::{EnsembleKind, HyperConfig, Imputation, Node};
use crate::cohort::{median, Label};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::provenance::Provenance;
use crate::rng::stream;

/// `count_y / total` over the training samples stored in a leaf.
pub fn leaf_probability(counts: [u32; 2], label: Label) -> f64 {
    let total = counts[0] + counts[1];
    debug_assert!(total > 0, "leaves always hold at least one sample");
    f64::from(counts[label.index()]) / f64::from(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probabilities {
    pub alive: f64,
    pub dead: f64,
}

impl Probabilities {
    pub fn new(alive: f64, dead: f64) -> Self {
        Self { alive, dead }
    }

    pub fn max(&self) -> f64 {
        self.alive.max(self.dead)
    }

    /// Most probable class; an exact tie predicts `Dead`.
    pub fn label(&self) -> Label {
        if self.dead >= self.alive {
            Label::Dead
        } else {
            Label::Alive
        }
    }

    pub fn of(&self, label: Label) -> f64 {
        match label {
            Label::Alive => self.alive,
            Label::Dead => self.dead,
        }
    }
}

pub fn predict_label(p: Probabilities) -> Label {
    p.label()
}

/// Per-feature fill values from the observed cells of `rows`. A feature
/// with no observed value falls back to the `-1` missing marker.
pub fn learn_imputation(rows: &[Vec<Option<f64>>], width: usize, strategy: Imputation) -> Vec<f64> {
    (0..width)
        .map(|f| {
            let mut observed: Vec<f64> = rows.iter().filter_map(|r| r[f]).collect();
            match strategy {
                Imputation::Constant(c) => c,
                _ if observed.is_empty() => -1.0,
                Imputation::Mean => observed.iter().sum::<f64>() / observed.len() as f64,
                Imputation::Median => median(&mut observed).expect("non-empty"),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format_version: u32,
    pub ensemble_kind: EnsembleKind,
    pub hyper: HyperConfig,
    pub feature_names: Vec<String>,
    pub imputation_values: Vec<f64>,
    /// Probability at or below which a prediction is reported uncertain.
    pub threshold: Option<f64>,
    pub trees: Vec<Node>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl Forest {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn impute(&self, row: &[Option<f64>]) -> Result<Vec<f64>> {
        if row.len() != self.width() {
            return Err(Error::WidthMismatch {
                expected: self.width(),
                actual: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(&self.imputation_values)
            .map(|(v, fill)| v.unwrap_or(*fill))
            .collect())
    }

    /// Per-tree probabilities of an imputed row.
    pub fn tree_probabilities(&self, dense: &[f64]) -> impl Iterator<Item = Probabilities> + '_ {
        let dense = dense.to_vec();
        self.trees.iter().map(move |t| {
            let c = t.leaf(&dense);
            Probabilities::new(leaf_probability(c, Label::Alive), leaf_probability(c, Label::Dead))
        })
    }

    fn proba_dense(&self, dense: &[f64]) -> Probabilities {
        let sum: f64 = self
            .trees
            .iter()
            .map(|t| leaf_probability(t.leaf(dense), Label::Dead))
            .sum();
        let dead = sum / self.trees.len() as f64;
        Probabilities::new(1.0 - dead, dead)
    }

    /// Mean of the per-tree leaf probabilities.
    pub fn predict_proba(&self, row: &[Option<f64>]) -> Result<Probabilities> {
        Ok(self.proba_dense(&self.impute(row)?))
    }

    pub fn predict_proba_batch(&self, rows: &[Vec<Option<f64>>]) -> Result<Vec<Probabilities>> {
        rows.iter().map(|r| self.predict_proba(r)).collect()
    }

    pub fn predict_label(&self, row: &[Option<f64>]) -> Result<Label> {
        Ok(self.predict_proba(row)?.label())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Forest> {
        let mut de = serde_json::Deserializer::from_str(text);
        de.disable_recursion_limit();
        let forest = Forest::deserialize(&mut de)?;
        de.end()?;
        forest.check()?;
        Ok(forest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Forest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Forest::from_json(&text)
    }

    fn check(&self) -> Result<()> {
        if self.format_version != Self::FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model format_version {}",
                self.format_version
            )));
        }
        if self.trees.is_empty() {
            return Err(Error::InvalidInput("model has no trees".into()));
        }
        if self.imputation_values.len() != self.width() {
            return Err(Error::WidthMismatch {
                expected: self.width(),
                actual: self.imputation_values.len(),
            });
        }
        if let Some(f) = self.trees.iter().filter_map(Node::max_feature).max() {
            if f >= self.width() {
                return Err(Error::WidthMismatch {
                    expected: self.width(),
                    actual: f + 1,
                });
            }
        }
        Ok(())
    }
}

struct Grower<'a> {
    data: &'a NodeData,
    hyper: &'a HyperConfig,
    width: usize,
}

impl Grower<'_> {
    fn grow<R: Rng>(&self, indices: &mut [usize], depth: usize, rng: &mut R, buf: &mut Scratch) -> Node {
        let counts = class_counts(self.data, indices);
        let leaf = || Node::Leaf {
            counts: [counts[0] as u32, counts[1] as u32],
        };
        let min_leaf = self.hyper.min_samples_leaf;
        if counts[0] == 0
            || counts[1] == 0
            || self.hyper.max_depth.is_some_and(|d| depth >= d)
            || indices.len() < 2 * min_leaf
        {
            return leaf();
        }

        let features = sample(rng, self.width, self.hyper.max_features).into_vec();
        let best = match self.hyper.kind {
            EnsembleKind::RandomForest => best_split_exhaustive(self.data, indices, &features, min_leaf, buf),
            EnsembleKind::ExtraTrees => best_split_random(self.data, indices, &features, min_leaf, rng),
        };
        let Some(best) = best else {
            return leaf();
        };

        let col = &self.data.columns[best.feature];
        let mut n_left = 0;
        for i in 0..indices.len() {
            if col[indices[i]] <= best.cut {
                indices.swap(i, n_left);
                n_left += 1;
            }
        }
        let (left, right) = indices.split_at_mut(n_left);
        let left = self.grow(left, depth + 1, rng, buf);
        let right = self.grow(right, depth + 1, rng, buf);
        Node::Split {
            feature: best.feature,
            cut: best.cut,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Trains an ensemble on `dataset`.
///
/// Imputation values are learned from `dataset` alone and stored in the
/// model. Tree `t` draws all of its randomness from the stream
/// `(hyper.seed, t)`, so the result does not depend on thread count.
pub fn fit(dataset: &Dataset, hyper: &HyperConfig) -> Result<Forest> {
    dataset.validate()?;
    let width = dataset.width();
    hyper.validate(width)?;
    let counts = dataset.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::SingleClass);
    }

    let imputation_values = learn_imputation(&dataset.rows, width, hyper.imputation);
    let columns: Vec<Vec<f64>> = (0..width)
        .map(|f| {
            dataset
                .rows
                .iter()
                .map(|r| r[f].unwrap_or(imputation_values[f]))
                .collect()
        })
        .collect();
    let classes: Vec<u8> = dataset.labels.iter().map(|l| l.index() as u8).collect();
    let n = dataset.len();
    let data = NodeData::new(columns, classes);
    let grower = Grower {
        data: &data,
        hyper,
        width,
    };

    let trees = (0..hyper.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(hyper.seed, t as u64);
            let mut indices: Vec<usize> = if hyper.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grower.grow(&mut indices, 0, &mut rng, &mut Scratch::default())
        })
        .collect();

    Ok(Forest {
        format_version: Forest::FORMAT_VERSION,
        ensemble_kind: hyper.kind,
        hyper: hyper.clone(),
        feature_names: dataset.feature_names.clone(),
        imputation_values,
        threshold: None,
        trees,
        provenance: None,
    })
}
