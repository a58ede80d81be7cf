//! Random hyperparameter search scored by stratified k-fold cross-validation,
//! with a reject-option threshold optimized on every validation fold.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Label;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::macro_f2;
use crate::rng::{derive_seed, stream};
use crate::tree::{fit, EnsembleKind, Forest, HyperConfig, Imputation, SplitCriterion};
use crate::uncertainty::{find_uncertain_threshold, DEFAULT_MAX_UNCERTAIN, DEFAULT_N_THRESHOLDS};

/// Training sets at least this large use 10 folds under the automatic rule.
pub const TEN_FOLD_MIN_ROWS: usize = 600;

/// Stream index reserved for the config-sampling sequence.
const SAMPLER_STREAM: u64 = u64::MAX;
/// Stream index reserved for the fold assignment.
const FOLD_STREAM: u64 = u64::MAX - 1;

/// Ranges sampled independently and uniformly for every config. Integer
/// ranges are inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub kinds: Vec<EnsembleKind>,
    pub n_trees: [usize; 2],
    pub max_depth: [usize; 2],
    /// Adds "unlimited" as one more depth choice.
    pub unlimited_depth: bool,
    pub min_samples_leaf: [usize; 2],
    /// Upper end `None` means the dataset width.
    pub max_features: [Option<usize>; 2],
    pub bootstrap: Vec<bool>,
    pub imputation: Vec<Imputation>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            kinds: vec![EnsembleKind::RandomForest, EnsembleKind::ExtraTrees],
            n_trees: [50, 500],
            max_depth: [3, 30],
            unlimited_depth: true,
            min_samples_leaf: [1, 10],
            max_features: [Some(1), None],
            bootstrap: vec![true, false],
            imputation: vec![Imputation::Mean, Imputation::Median, Imputation::MISSING_MARKER],
        }
    }
}

impl SearchSpace {
    /// The same space restricted to one ensemble kind.
    pub fn only(&self, kind: EnsembleKind) -> Self {
        SearchSpace {
            kinds: vec![kind],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("search space: {m}")));
        if self.kinds.is_empty() || self.bootstrap.is_empty() || self.imputation.is_empty() {
            return bad("kinds, bootstrap and imputation need at least one choice");
        }
        for (name, [lo, hi]) in [
            ("n_trees", self.n_trees),
            ("max_depth", self.max_depth),
            ("min_samples_leaf", self.min_samples_leaf),
        ] {
            if lo == 0 || lo > hi {
                return bad(&format!("{name} range [{lo}, {hi}] must satisfy 1 <= lo <= hi"));
            }
        }
        match self.max_features {
            [Some(0), _] | [None, _] => bad("max_features lower end must be at least 1"),
            [Some(lo), Some(hi)] if lo > hi => bad("max_features range is empty"),
            _ => Ok(()),
        }
    }
}

/// Draws one config for a dataset of `width` features. `seed` becomes the
/// tree-growing seed of the config.
pub fn sample_config<R: Rng + ?Sized>(space: &SearchSpace, width: usize, seed: u64, rng: &mut R) -> HyperConfig {
    let range = |r: &mut R, [lo, hi]: [usize; 2]| r.random_range(lo..=hi);
    let kind = *space.kinds.choose(rng).expect("validated space");
    let n_trees = range(rng, space.n_trees);
    let depth_choices = space.max_depth[1] - space.max_depth[0] + 1 + usize::from(space.unlimited_depth);
    let d = rng.random_range(0..depth_choices);
    let max_depth = (space.max_depth[0] + d <= space.max_depth[1]).then_some(space.max_depth[0] + d);
    let min_samples_leaf = range(rng, space.min_samples_leaf);
    let hi = space.max_features[1].unwrap_or(width).min(width).max(1);
    let lo = space.max_features[0].unwrap_or(1).min(hi);
    let max_features = rng.random_range(lo..=hi);
    let bootstrap = *space.bootstrap.choose(rng).expect("validated space");
    let imputation = *space.imputation.choose(rng).expect("validated space");
    HyperConfig {
        kind,
        n_trees,
        max_depth,
        min_samples_leaf,
        max_features,
        bootstrap,
        imputation,
        criterion: SplitCriterion::Gini,
        seed,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpec {
    pub n_configs: usize,
    /// `None` applies the automatic rule (see [`resolve_folds`]).
    pub folds: Option<usize>,
    pub max_u: f64,
    pub n_thresholds: usize,
    pub seed: u64,
    pub space: SearchSpace,
}

impl Default for SearchSpec {
    fn default() -> Self {
        SearchSpec {
            n_configs: 4096,
            folds: None,
            max_u: DEFAULT_MAX_UNCERTAIN,
            n_thresholds: DEFAULT_N_THRESHOLDS,
            seed: 0,
            space: SearchSpace::default(),
        }
    }
}

impl SearchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_configs == 0 {
            return Err(Error::Config("n_configs must be at least 1".into()));
        }
        if !(self.max_u > 0.0 && self.max_u < 1.0) {
            return Err(Error::Config(format!("max_u {} must lie in (0, 1)", self.max_u)));
        }
        if self.n_thresholds == 0 {
            return Err(Error::Config("n_thresholds must be at least 1".into()));
        }
        if matches!(self.folds, Some(k) if k < 2) {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        self.space.validate()
    }
}

/// Fold count for a training set. The automatic rule picks 10 folds from
/// [`TEN_FOLD_MIN_ROWS`] rows upward and 5 below, lowered to the minority
/// class size when that is smaller. A fixed count is used as given.
pub fn resolve_folds(requested: Option<usize>, class_counts: [usize; 2]) -> Result<usize> {
    let minority = class_counts[0].min(class_counts[1]);
    let k = match requested {
        Some(k) => k,
        None => {
            let rows = class_counts[0] + class_counts[1];
            let k = if rows >= TEN_FOLD_MIN_ROWS { 10 } else { 5 };
            k.min(minority)
        }
    };
    if k < 2 || minority < k {
        return Err(Error::TooFewSamples {
            class: if class_counts[0] <= class_counts[1] { Label::Alive } else { Label::Dead }.as_str(),
            count: minority,
            required: k.max(2),
        });
    }
    Ok(k)
}

/// Partitions row indices into `k` validation folds, stratified by label.
/// Each class is shuffled under `seed` and dealt round-robin, so the first
/// folds take the remainder. Every fold is returned sorted.
pub fn stratified_kfold(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k must be at least 2, got {k}")));
    }
    let mut folds = vec![Vec::new(); k];
    for class in [Label::Alive, Label::Dead] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::TooFewSamples {
                class: class.as_str(),
                count: members.len(),
                required: k,
            });
        }
        rand::seq::SliceRandom::shuffle(&mut members[..], &mut stream(seed, class.index() as u64));
        for (j, idx) in members.into_iter().enumerate() {
            folds[j % k].push(idx);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Row indices outside validation fold `fold`.
pub fn training_side(folds: &[Vec<usize>], fold: usize) -> Vec<usize> {
    let mut rows: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != fold)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    rows.sort_unstable();
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub fold_scores: Vec<f64>,
    pub fold_thresholds: Vec<f64>,
    pub mean_score: f64,
    pub mean_threshold: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Fits `config` on every training side, scores the matching validation
/// fold with macro-F2 after threshold optimization, and averages the
/// per-fold (score, threshold) pairs.
pub fn cross_validate(
    dataset: &Dataset,
    config: &HyperConfig,
    folds: &[Vec<usize>],
    max_u: f64,
    n_thresholds: usize,
) -> Result<CvOutcome> {
    let mut fold_scores = Vec::with_capacity(folds.len());
    let mut fold_thresholds = Vec::with_capacity(folds.len());
    for (j, validation) in folds.iter().enumerate() {
        let train = dataset.subset(&training_side(folds, j));
        let held_out = dataset.subset(validation);
        let forest = fit(&train, config)?;
        let probs = forest.predict_proba_batch(&held_out.rows)?;
        let r = find_uncertain_threshold(&held_out.labels, &probs, max_u, n_thresholds, macro_f2)?;
        fold_scores.push(r.score);
        fold_thresholds.push(r.threshold);
    }
    Ok(CvOutcome {
        mean_score: mean(&fold_scores),
        mean_threshold: mean(&fold_thresholds),
        fold_scores,
        fold_thresholds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    /// Draw order, starting at 0.
    pub index: usize,
    pub config: HyperConfig,
    pub cv: CvOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedConfig {
    pub index: usize,
    pub config: HyperConfig,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_index: usize,
    pub best_config: HyperConfig,
    pub best_score: f64,
    /// Mean of the per-fold optimal thresholds of the best config.
    pub best_threshold: f64,
    pub k_folds: usize,
    /// Non-failed configs in draw order.
    pub log: Vec<ConfigRecord>,
    pub failures: Vec<FailedConfig>,
    /// Best config refit on the full training set, threshold attached.
    pub forest: Forest,
}

/// The `n_configs` configs a search with `spec` evaluates, in draw order.
pub fn draw_configs(spec: &SearchSpec, width: usize) -> Vec<HyperConfig> {
    let mut rng = stream(spec.seed, SAMPLER_STREAM);
    (0..spec.n_configs)
        .map(|i| sample_config(&spec.space, width, derive_seed(spec.seed, i as u64), &mut rng))
        .collect()
}

/// Evaluates the configs of [`draw_configs`] in parallel on shared folds and
/// keeps the highest mean score, the earliest draw winning ties.
pub fn random_search(dataset: &Dataset, spec: &SearchSpec) -> Result<SearchResult> {
    spec.validate()?;
    dataset.validate()?;
    let k = resolve_folds(spec.folds, dataset.class_counts())?;
    let folds = stratified_kfold(&dataset.labels, k, derive_seed(spec.seed, FOLD_STREAM))?;
    let configs = draw_configs(spec, dataset.width());
    search_configs(dataset, configs, &folds, spec.max_u, spec.n_thresholds)
}

/// [`random_search`] over an explicit config list and fold assignment.
pub fn search_configs(
    dataset: &Dataset,
    configs: Vec<HyperConfig>,
    folds: &[Vec<usize>],
    max_u: f64,
    n_thresholds: usize,
) -> Result<SearchResult> {
    let outcomes: Vec<Result<CvOutcome>> = configs
        .par_iter()
        .map(|c| cross_validate(dataset, c, folds, max_u, n_thresholds))
        .collect();

    let mut log = Vec::new();
    let mut failures = Vec::new();
    for (index, (config, outcome)) in configs.into_iter().zip(outcomes).enumerate() {
        match outcome {
            Ok(cv) => log.push(ConfigRecord { index, config, cv }),
            Err(e) => {
                log::warn!("{}: config {index} failed: {e}", dataset.id);
                failures.push(FailedConfig {
                    index,
                    config,
                    reason: e.to_string(),
                });
            }
        }
    }
    let best = log
        .iter()
        .fold(None::<&ConfigRecord>, |best, r| match best {
            Some(b) if b.cv.mean_score >= r.cv.mean_score => Some(b),
            _ => Some(r),
        })
        .ok_or(Error::AllConfigsFailed)?;

    let mut forest = fit(dataset, &best.config)?;
    forest.threshold = Some(best.cv.mean_threshold);
    Ok(SearchResult {
        best_index: best.index,
        best_config: best.config.clone(),
        best_score: best.cv.mean_score,
        best_threshold: best.cv.mean_threshold,
        k_folds: folds.len(),
        failures,
        forest,
        log,
    })
}

/// One CSV row per evaluated config: hyperparameters, per-fold scores and
/// thresholds, then the means.
pub fn write_search_log(result: &SearchResult, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let k = result.k_folds;
    let mut header: Vec<String> = [
        "index",
        "kind",
        "n_trees",
        "max_depth",
        "min_samples_leaf",
        "max_features",
        "bootstrap",
        "imputation",
        "seed",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=k).map(|j| format!("fold{j}_score")));
    header.extend((1..=k).map(|j| format!("fold{j}_threshold")));
    header.extend(["mean_score".to_string(), "mean_threshold".to_string()]);
    w.write_record(&header)?;
    for r in &result.log {
        let c = &r.config;
        let mut row = vec![
            r.index.to_string(),
            c.kind.to_string(),
            c.n_trees.to_string(),
            c.max_depth.map_or("none".into(), |d| d.to_string()),
            c.min_samples_leaf.to_string(),
            c.max_features.to_string(),
            c.bootstrap.to_string(),
            c.imputation.to_string(),
            c.seed.to_string(),
        ];
        row.extend(r.cv.fold_scores.iter().map(f64::to_string));
        row.extend(r.cv.fold_thresholds.iter().map(f64::to_string));
        row.push(r.cv.mean_score.to_string());
        row.push(r.cv.mean_threshold.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetId, Slice};
    use crate::snapshot::{DayConfig, FeatureForm};

    fn labels(alive: usize, dead: usize) -> Vec<Label> {
        let mut v = vec![Label::Alive; alive];
        v.extend(vec![Label::Dead; dead]);
        v
    }

    fn separable(n: usize) -> Dataset {
        let rows = (0..n).map(|i| vec![Some(i as f64), Some((i * 7 % 5) as f64)]).collect();
        let labels = (0..n).map(|i| if i < n / 2 { Label::Alive } else { Label::Dead }).collect();
        Dataset {
            id: DatasetId {
                phase: Slice::Hcp,
                day: DayConfig::End,
                form: FeatureForm::Numerical,
            },
            feature_names: vec!["a".into(), "b".into()],
            rows,
            labels,
            patient_ids: (0..n).map(|i| format!("p{i:03}")).collect(),
        }
    }

    #[test]
    fn kfold_exact_and_remainder() {
        let folds = stratified_kfold(&labels(50, 10), 5, 3).unwrap();
        let l = labels(50, 10);
        for f in &folds {
            assert_eq!(f.iter().filter(|&&i| l[i] == Label::Dead).count(), 2);
            assert_eq!(f.len(), 12);
        }
        let folds = stratified_kfold(&labels(52, 5), 5, 3).unwrap();
        let alive: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| i < 52).count()).collect();
        assert_eq!(alive, vec![11, 11, 10, 10, 10]);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
        assert!(stratified_kfold(&labels(52, 4), 5, 3).is_err());
    }

    #[test]
    fn fold_rule() {
        assert_eq!(resolve_folds(None, [500, 100]).unwrap(), 10);
        assert_eq!(resolve_folds(None, [500, 99]).unwrap(), 5);
        assert_eq!(resolve_folds(None, [700, 7]).unwrap(), 7);
        assert!(resolve_folds(None, [10, 1]).is_err());
        assert!(resolve_folds(Some(10), [100, 9]).is_err());
    }

    #[test]
    fn sampler_determinism_and_degenerate_space() {
        let spec = SearchSpec {
            n_configs: 20,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(draw_configs(&spec, 12), draw_configs(&spec, 12));
        assert!(draw_configs(&spec, 12).iter().all(|c| c.max_features <= 12 && c.validate(12).is_ok()));

        let point = SearchSpace {
            kinds: vec![EnsembleKind::ExtraTrees],
            n_trees: [7, 7],
            max_depth: [4, 4],
            unlimited_depth: false,
            min_samples_leaf: [2, 2],
            max_features: [Some(3), Some(3)],
            bootstrap: vec![false],
            imputation: vec![Imputation::Median],
        };
        let mut rng = stream(1, 1);
        let a = sample_config(&point, 10, 5, &mut rng);
        let b = sample_config(&point, 10, 5, &mut rng);
        assert_eq!(a, b);
        assert_eq!((a.n_trees, a.max_depth, a.max_features), (7, Some(4), 3));
    }

    #[test]
    fn all_imputations_appear() {
        let spec = SearchSpec {
            n_configs: 4096,
            ..Default::default()
        };
        let configs = draw_configs(&spec, 20);
        for imp in SearchSpace::default().imputation {
            assert!(configs.iter().any(|c| c.imputation == imp));
        }
        assert!(configs.iter().any(|c| c.max_depth.is_none()));
    }

    #[test]
    fn singleton_search_and_refit() {
        let ds = separable(40);
        let spec = SearchSpec {
            n_configs: 1,
            folds: Some(4),
            seed: 2,
            space: SearchSpace {
                n_trees: [5, 5],
                ..Default::default()
            },
            ..Default::default()
        };
        let r = random_search(&ds, &spec).unwrap();
        assert_eq!(r.best_index, 0);
        assert_eq!(r.log.len(), 1);
        assert_eq!(r.best_config, draw_configs(&spec, 2)[0]);
        assert_eq!(r.forest.threshold, Some(r.best_threshold));
        assert_eq!(r.best_score, r.log[0].cv.mean_score);
    }

    #[test]
    fn failed_configs_are_skipped() {
        let ds = separable(20);
        let folds = stratified_kfold(&ds.labels, 2, 0).unwrap();
        let good = HyperConfig::single_tree(2);
        let mut bad = good.clone();
        bad.max_features = 9;
        let r = search_configs(&ds, vec![bad.clone(), good.clone()], &folds, 0.25, 10).unwrap();
        assert_eq!(r.log.len(), 1);
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.best_index, 1);
        assert!(matches!(
            search_configs(&ds, vec![bad], &folds, 0.25, 10),
            Err(Error::AllConfigsFailed)
        ));
    }

    #[test]
    fn ties_keep_earliest_draw() {
        let ds = separable(20);
        let folds = stratified_kfold(&ds.labels, 2, 0).unwrap();
        let c = HyperConfig::single_tree(2);
        let r = search_configs(&ds, vec![c.clone(), c.clone(), c], &folds, 0.25, 10).unwrap();
        assert_eq!(r.best_index, 0);
        assert_eq!(r.best_score, 1.0);
    }

    #[test]
    fn log_csv_has_one_row_per_config() {
        let ds = separable(20);
        let folds = stratified_kfold(&ds.labels, 2, 0).unwrap();
        let c = HyperConfig::single_tree(2);
        let r = search_configs(&ds, vec![c.clone(), c], &folds, 0.25, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_search_log(&r, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].ends_with("fold1_threshold,fold2_threshold,mean_score,mean_threshold"));
    }
}
