//! Python bindings: datasets, forests, search, evaluation and the pipeline.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use prognosis::cohort::Label;
use prognosis::dataset::{Dataset, DatasetId, Slice};
use prognosis::metrics;
use prognosis::pipeline::{run_pipeline as run, PipelineConfig};
use prognosis::selection::SearchSpec;
use prognosis::snapshot::{DayConfig, FeatureForm};
use prognosis::synth::{generate, GeneratorSpec};
use prognosis::tree::{fit, EnsembleKind, Forest, HyperConfig, Imputation, Probabilities, SplitCriterion};
use prognosis::uncertainty::{self, find_uncertain_threshold as find_threshold};
use prognosis::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

fn labels(values: &[String]) -> PyResult<Vec<Label>> {
    values.iter().map(|s| parse(s)).collect()
}

fn imputation(s: &str) -> PyResult<Imputation> {
    match s {
        "mean" => Ok(Imputation::Mean),
        "median" => Ok(Imputation::Median),
        other => other
            .parse::<f64>()
            .map(Imputation::Constant)
            .map_err(|_| PyValueError::new_err(format!("imputation must be mean, median or a number, got `{other}`"))),
    }
}

/// Labeled feature table; missing cells are `None`.
#[pyclass(name = "Dataset", module = "prognosis_py", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (rows, labels, feature_names=None, patient_ids=None))]
    fn new(
        rows: Vec<Vec<Option<f64>>>,
        labels: Vec<String>,
        feature_names: Option<Vec<String>>,
        patient_ids: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        let inner = Dataset {
            id: DatasetId {
                phase: Slice::All,
                day: DayConfig::End,
                form: FeatureForm::Numerical,
            },
            feature_names: feature_names.unwrap_or_else(|| (0..width).map(|j| format!("x{j}")).collect()),
            rows,
            labels: self::labels(&labels)?,
            patient_ids: patient_ids.unwrap_or_else(|| (0..n).map(|i| format!("r{i}")).collect()),
        };
        inner.validate().map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: Dataset::load_csv(&path, None).map_err(py_err)?,
        })
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_csv(&path).map_err(py_err)
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<&'static str> {
        self.inner.labels.iter().map(|l| l.as_str()).collect()
    }

    #[getter]
    fn patient_ids(&self) -> Vec<String> {
        self.inner.patient_ids.clone()
    }

    #[getter]
    fn rows(&self) -> Vec<Vec<Option<f64>>> {
        self.inner.rows.clone()
    }

    /// `(alive, dead)` counts.
    fn class_counts(&self) -> (usize, usize) {
        let [a, d] = self.inner.class_counts();
        (a, d)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset({}, rows={}, width={})", self.inner.id, self.inner.len(), self.inner.width())
    }
}

/// Fitted RF or ET ensemble, optionally carrying a reject threshold.
#[pyclass(name = "Forest", module = "prognosis_py", frozen)]
struct PyForest {
    inner: Forest,
}

#[pymethods]
impl PyForest {
    #[staticmethod]
    #[pyo3(signature = (dataset, kind="RF", n_trees=100, max_depth=None, min_samples_leaf=1,
                        max_features=None, bootstrap=true, imputation="-1", seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        dataset: &PyDataset,
        kind: &str,
        n_trees: usize,
        max_depth: Option<usize>,
        min_samples_leaf: usize,
        max_features: Option<usize>,
        bootstrap: bool,
        imputation: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let hyper = HyperConfig {
            kind: parse::<EnsembleKind>(kind)?,
            n_trees,
            max_depth,
            min_samples_leaf,
            max_features: max_features.unwrap_or(dataset.inner.width()),
            bootstrap,
            imputation: self::imputation(imputation)?,
            criterion: SplitCriterion::Gini,
            seed,
        };
        let ds = &dataset.inner;
        let inner = py.detach(|| fit(ds, &hyper)).map_err(py_err)?;
        Ok(PyForest { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyForest {
            inner: Forest::load(&path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyForest {
            inner: Forest::from_json(text).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.ensemble_kind.short()
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.trees.len()
    }

    #[getter]
    fn threshold(&self) -> Option<f64> {
        self.inner.threshold
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    /// `(p_alive, p_dead)` per row.
    fn predict_proba(&self, rows: Vec<Vec<Option<f64>>>) -> PyResult<Vec<(f64, f64)>> {
        let probs = self.inner.predict_proba_batch(&rows).map_err(py_err)?;
        Ok(probs.iter().map(|p| (p.alive, p.dead)).collect())
    }

    fn predict(&self, rows: Vec<Vec<Option<f64>>>) -> PyResult<Vec<&'static str>> {
        let probs = self.inner.predict_proba_batch(&rows).map_err(py_err)?;
        Ok(probs.iter().map(|p| p.label().as_str()).collect())
    }

    /// `alive`, `dead` or `uncertain` per row; needs a threshold.
    fn triage(&self, rows: Vec<Vec<Option<f64>>>) -> PyResult<Vec<&'static str>> {
        let out = uncertainty::apply_threshold(&self.inner, &rows).map_err(py_err)?;
        Ok(out.iter().map(|t| t.label.as_str()).collect())
    }

    /// Held-out report as a JSON string.
    fn evaluate(&self, dataset: &PyDataset) -> PyResult<String> {
        let report = prognosis::evaluation::evaluate(&self.inner, &dataset.inner).map_err(py_err)?;
        report.to_json().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Forest(kind={}, trees={}, threshold={:?})",
            self.kind(),
            self.n_trees(),
            self.inner.threshold
        )
    }
}

/// Random search with cross-validated thresholds. Returns the refit best
/// forest, its mean CV macro-F2 and the mean threshold.
#[pyfunction]
#[pyo3(signature = (dataset, seed, n_configs=64, folds=None, max_u=0.25, kind=None))]
fn random_search(
    py: Python<'_>,
    dataset: &PyDataset,
    seed: u64,
    n_configs: usize,
    folds: Option<usize>,
    max_u: f64,
    kind: Option<&str>,
) -> PyResult<(PyForest, f64, f64)> {
    let mut spec = SearchSpec {
        n_configs,
        folds,
        max_u,
        seed,
        ..SearchSpec::default()
    };
    if let Some(k) = kind {
        spec.space = spec.space.only(parse(k)?);
    }
    let ds = &dataset.inner;
    let result = py
        .detach(|| prognosis::selection::random_search(ds, &spec))
        .map_err(py_err)?;
    Ok((
        PyForest { inner: result.forest },
        result.best_score,
        result.best_threshold,
    ))
}

/// Threshold search over `(labels, p_dead)` scored by macro-F2. Returns
/// `(threshold, score, rejected_fraction)`.
#[pyfunction]
#[pyo3(signature = (labels, p_dead, max_u=0.25, n=100))]
fn find_uncertain_threshold(labels: Vec<String>, p_dead: Vec<f64>, max_u: f64, n: usize) -> PyResult<(f64, f64, f64)> {
    let truth = self::labels(&labels)?;
    let probs: Vec<Probabilities> = p_dead.iter().map(|&d| Probabilities::new(1.0 - d, d)).collect();
    let r = find_threshold(&truth, &probs, max_u, n, metrics::macro_f2).map_err(py_err)?;
    Ok((r.threshold, r.score, r.rejected_fraction))
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<String>) -> PyResult<f64> {
    metrics::roc_auc(&scores, &self::labels(&labels)?).map_err(py_err)
}

#[pyfunction]
fn macro_f2(truth: Vec<String>, predicted: Vec<String>) -> PyResult<f64> {
    let (t, p) = (labels(&truth)?, labels(&predicted)?);
    if t.len() != p.len() {
        return Err(PyValueError::new_err("truth and predicted differ in length"));
    }
    Ok(metrics::macro_f2(&t, &p))
}

/// Writes a synthetic event CSV and returns the number of patients.
#[pyfunction]
#[pyo3(signature = (path, seed, n_patients=2000, drift=2.0, mortality=0.11))]
fn synth_events(py: Python<'_>, path: PathBuf, seed: u64, n_patients: usize, drift: f64, mortality: f64) -> PyResult<usize> {
    let spec = GeneratorSpec {
        seed,
        n_patients,
        drift_factor: drift,
        base_mortality: mortality,
        ..GeneratorSpec::default()
    };
    let records = py.detach(|| generate(&spec)).map_err(py_err)?;
    prognosis::cohort::write_events_file(&records, &path).map_err(py_err)?;
    Ok(records.len())
}

/// Runs the full pipeline from a JSON config string and returns the
/// summary as Markdown.
#[pyfunction]
#[pyo3(signature = (config_json, threads=None))]
fn run_pipeline(py: Python<'_>, config_json: &str, threads: Option<usize>) -> PyResult<String> {
    let config: PipelineConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(format!("config: {e}")))?;
    let summary = py.detach(|| run(&config, threads)).map_err(py_err)?;
    Ok(summary.to_markdown())
}

#[pymodule]
fn prognosis_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyForest>()?;
    m.add_function(wrap_pyfunction!(random_search, m)?)?;
    m.add_function(wrap_pyfunction!(find_uncertain_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f2, m)?)?;
    m.add_function(wrap_pyfunction!(synth_events, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
