//! End-to-end batch run: cohort, split, per-day datasets, four searches per
//! (phase, day), model choice, held-out reports and a summary table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::cohort::{cohort_stats, ingest_cohort, write_events_file, CohortFile, PatientRecord};
use crate::dataset::{build_day_datasets, stratified_split_by_phase, Dataset, DatasetId, Slice};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::provenance::{config_hash, read_provenance, Provenance};
use crate::registry::Registry;
use crate::rng::derive_seed_str;
use crate::selection::{random_search, write_search_log, SearchSpec};
use crate::snapshot::{DayConfig, FeatureForm, DEFAULT_TREND_THRESHOLD};
use crate::synth::{generate, GeneratorSpec};
use crate::tree::{EnsembleKind, Forest};

pub const DEFAULT_PIPELINE_CONFIGS: usize = 64;

/// Model families tried for every (phase, day), in tie-break order.
pub const CANDIDATES: [(EnsembleKind, FeatureForm); 4] = [
    (EnsembleKind::RandomForest, FeatureForm::Numerical),
    (EnsembleKind::RandomForest, FeatureForm::Categorical),
    (EnsembleKind::ExtraTrees, FeatureForm::Numerical),
    (EnsembleKind::ExtraTrees, FeatureForm::Categorical),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every random stream of the run derives from it.
    pub seed: u64,
    /// Lab-test registry file; the built-in registry when absent.
    #[serde(default)]
    pub registry: Option<PathBuf>,
    /// Event CSV; a synthetic cohort is generated when absent.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default = "default_boundary")]
    pub boundary: NaiveDate,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_trend")]
    pub trend_threshold: f64,
    #[serde(default = "default_days")]
    pub day_configs: Vec<DayConfig>,
    #[serde(default = "default_slices")]
    pub slices: Vec<Slice>,
    #[serde(default = "default_search")]
    pub search: SearchSpec,
    #[serde(default)]
    pub synth: GeneratorSpec,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_boundary() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 21).expect("valid literal date")
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_trend() -> f64 {
    DEFAULT_TREND_THRESHOLD
}
fn default_days() -> Vec<DayConfig> {
    DayConfig::STANDARD.to_vec()
}
fn default_slices() -> Vec<Slice> {
    vec![Slice::Hcp, Slice::Mcp]
}
/// Pipeline forests are smaller than the standalone search default so the
/// full grid of searches fits a desktop time budget.
pub const PIPELINE_N_TREES: [usize; 2] = [10, 100];

fn default_search() -> SearchSpec {
    let mut search = SearchSpec {
        n_configs: DEFAULT_PIPELINE_CONFIGS,
        ..SearchSpec::default()
    };
    search.space.n_trees = PIPELINE_N_TREES;
    search
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

impl PipelineConfig {
    pub fn new(seed: u64) -> Self {
        PipelineConfig {
            seed,
            registry: None,
            input: None,
            boundary: default_boundary(),
            test_fraction: default_test_fraction(),
            trend_threshold: default_trend(),
            day_configs: default_days(),
            slices: default_slices(),
            search: default_search(),
            synth: GeneratorSpec::default(),
            out_dir: default_out_dir(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks everything that can be checked without running a stage.
    pub fn validate(&self) -> Result<()> {
        for (what, p) in [("registry", &self.registry), ("input", &self.input)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Config(format!("{what} file {} does not exist", p.display())));
                }
            }
        }
        if let Some(p) = &self.registry {
            Registry::load(p).map_err(|e| Error::Config(format!("registry: {e}")))?;
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction {} must lie in (0, 1)", self.test_fraction)));
        }
        if !(self.trend_threshold >= 0.0 && self.trend_threshold.is_finite()) {
            return Err(Error::Config("trend_threshold must be a non-negative number".into()));
        }
        let mut days = self.day_configs.clone();
        days.sort_by_key(|d| d.slug());
        days.dedup();
        if days.is_empty() || days.len() != self.day_configs.len() {
            return Err(Error::Config("day_configs must be non-empty and distinct".into()));
        }
        let mut slices = self.slices.clone();
        slices.sort_by_key(|s| s.as_str());
        slices.dedup();
        if slices.is_empty() || slices.len() != self.slices.len() {
            return Err(Error::Config("slices must be non-empty and distinct".into()));
        }
        self.search.validate()?;
        if self.input.is_none() {
            self.synth.validate()?;
        }
        Ok(())
    }

    /// Hash over everything that influences results; the output directory
    /// is left out so relocated runs stay comparable.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        config_hash(&c)
    }

    pub fn provenance(&self) -> Result<Provenance> {
        Ok(Provenance::new(self.hash()?, self.seed))
    }

    fn stream_seed(&self, key: &str) -> u64 {
        derive_seed_str(self.seed, key)
    }
}

/// Search spec for one (dataset, kind) search of a run.
pub fn search_spec_for(config: &PipelineConfig, id: DatasetId, kind: EnsembleKind) -> SearchSpec {
    SearchSpec {
        seed: config.stream_seed(&format!("search/{}/{}", id.stem(), kind)),
        space: config.search.space.only(kind),
        ..config.search.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub kind: EnsembleKind,
    pub form: FeatureForm,
    pub cv_score: f64,
    pub cv_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub phase: Slice,
    pub day: DayConfig,
    /// `RF-N`, `ET-C`, ...
    pub model: String,
    pub f2: f64,
    pub roc: Option<f64>,
    pub f2_u: f64,
    pub roc_u: Option<f64>,
    pub uncertain: f64,
    pub candidates: Vec<CandidateScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub rows: Vec<SummaryRow>,
    pub provenance: Provenance,
}

pub fn model_label(kind: EnsembleKind, form: FeatureForm) -> String {
    let f = match form {
        FeatureForm::Numerical => "N",
        FeatureForm::Categorical => "C",
    };
    format!("{kind}-{f}")
}

impl PipelineSummary {
    pub fn to_markdown(&self) -> String {
        let pct = |x: f64| format!("{:.1}", 100.0 * x);
        let opt = |x: Option<f64>| x.map_or("n/a".into(), pct);
        let mut md = String::from("# Predictive performance\n");
        let mut phases: Vec<Slice> = self.rows.iter().map(|r| r.phase).collect();
        phases.dedup();
        for phase in phases {
            let _ = writeln!(md, "\n## {} data\n", phase.as_str().to_uppercase());
            let _ = writeln!(md, "| Day | F2 | ROC | F2-U | ROC-U | % Unc | Model |");
            let _ = writeln!(md, "|---|---|---|---|---|---|---|");
            for r in self.rows.iter().filter(|r| r.phase == phase) {
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} | {} | {} | {} |",
                    r.day.slug(),
                    pct(r.f2),
                    opt(r.roc),
                    pct(r.f2_u),
                    opt(r.roc_u),
                    pct(r.uncertain),
                    r.model
                );
            }
        }
        let p = &self.provenance;
        let _ = writeln!(md, "\n{} {} config {} seed {}", p.tool, p.tool_version, p.config_hash, p.seed);
        md
    }
}

/// Output layout of a run directory.
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: &Path) -> Self {
        RunLayout { root: root.to_path_buf() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn events(&self) -> PathBuf {
        self.root.join("cohort").join("events.csv")
    }
    pub fn cohort(&self) -> PathBuf {
        self.root.join("cohort").join("cohort.json")
    }
    pub fn stats(&self) -> PathBuf {
        self.root.join("cohort").join("stats.json")
    }
    pub fn split(&self) -> PathBuf {
        self.root.join("split.csv")
    }
    pub fn dataset(&self, id: DatasetId, side: &str) -> PathBuf {
        self.root.join("datasets").join(format!("{}-{side}.csv", id.stem()))
    }
    pub fn search_log(&self, id: DatasetId, kind: EnsembleKind) -> PathBuf {
        self.root.join("searches").join(format!("{}-{kind}.csv", id.stem()))
    }
    pub fn model(&self, phase: Slice, day: DayConfig) -> PathBuf {
        self.root.join("models").join(format!("{phase}-{}.json", day.slug()))
    }
    pub fn report(&self, phase: Slice, day: DayConfig, ext: &str) -> PathBuf {
        self.root.join("reports").join(format!("{phase}-{}.{ext}", day.slug()))
    }
    pub fn summary(&self, ext: &str) -> PathBuf {
        self.root.join(format!("summary.{ext}"))
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

/// Loads the configured cohort, or generates it from the synth spec with a
/// seed derived from the master seed.
pub fn load_cohort(config: &PipelineConfig, registry: &Registry) -> Result<Vec<PatientRecord>> {
    match &config.input {
        Some(path) => Ok(ingest_cohort(path, registry)?.records),
        None => {
            let spec = GeneratorSpec {
                seed: config.stream_seed("synth"),
                ..config.synth.clone()
            };
            generate(&spec)
        }
    }
}

/// Runs every stage, using at most `threads` worker threads (all cores when
/// `None`). Artifacts of completed stages stay on disk when a later stage
/// fails.
pub fn run_pipeline(config: &PipelineConfig, threads: Option<usize>) -> Result<PipelineSummary> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_stages(config))
}

fn run_stages(config: &PipelineConfig) -> Result<PipelineSummary> {
    let layout = RunLayout::new(&config.out_dir);
    let provenance = config.provenance()?;
    write(&layout.config(), serde_json::to_string_pretty(config)?)?;

    let registry = match &config.registry {
        Some(p) => Registry::load(p),
        None => Ok(Registry::default()),
    }
    .map_err(|e| e.in_stage("registry"))?;

    log::info!("stage cohort");
    let records = (|| -> Result<Vec<PatientRecord>> {
        let records = load_cohort(config, &registry)?;
        ensure_parent(&layout.events())?;
        write_events_file(&records, &layout.events())?;
        CohortFile::new(config.boundary, registry.clone(), records.clone()).save(&layout.cohort())?;
        let stats = cohort_stats(&records, config.boundary)?;
        write(&layout.stats(), serde_json::to_string_pretty(&stats)?)?;
        Ok(records)
    })()
    .map_err(|e| e.in_stage("cohort"))?;

    log::info!("stage split");
    let split = (|| {
        let split = stratified_split_by_phase(&records, config.boundary, config.test_fraction, config.stream_seed("split"))?;
        split.save(&layout.split())?;
        Ok(split)
    })()
    .map_err(|e: Error| e.in_stage("split"))?;

    log::info!("stage datasets");
    // datasets[slice][form] -> per-day train/test pairs
    let mut datasets = Vec::new();
    for &slice in &config.slices {
        let mut per_form = Vec::new();
        for form in FeatureForm::ALL {
            let days = build_day_datasets(
                &records,
                config.boundary,
                &registry,
                &split,
                slice,
                form,
                &config.day_configs,
                config.trend_threshold,
            )
            .map_err(|e| e.in_stage("datasets"))?;
            for d in &days {
                for (side, ds) in [("train", &d.train), ("test", &d.test)] {
                    let path = layout.dataset(ds.id, side);
                    ensure_parent(&path).map_err(|e| e.in_stage("datasets"))?;
                    ds.save_csv(&path).map_err(|e| e.in_stage("datasets"))?;
                }
            }
            per_form.push(days);
        }
        datasets.push(per_form);
    }

    let mut rows = Vec::new();
    for (si, &slice) in config.slices.iter().enumerate() {
        for (di, &day) in config.day_configs.iter().enumerate() {
            log::info!("stage train {slice} {}", day.slug());
            let pair = |form: FeatureForm| {
                let f = FeatureForm::ALL.iter().position(|x| *x == form).expect("known form");
                &datasets[si][f][di]
            };
            let (forest, candidates, form) =
                select_model(config, &layout, &provenance, |form| &pair(form).train).map_err(|e| e.in_stage("train"))?;
            let model_path = layout.model(slice, day);
            ensure_parent(&model_path).map_err(|e| e.in_stage("train"))?;
            forest.save(&model_path).map_err(|e| e.in_stage("train"))?;

            log::info!("stage evaluate {slice} {}", day.slug());
            let report = (|| -> Result<EvalReport> {
                let report = evaluate(&forest, &pair(form).test)?;
                write(&layout.report(slice, day, "json"), report.to_json()?)?;
                write(&layout.report(slice, day, "md"), report.to_markdown())?;
                Ok(report)
            })()
            .map_err(|e| e.in_stage("evaluate"))?;

            rows.push(SummaryRow {
                phase: slice,
                day,
                model: model_label(forest.ensemble_kind, form),
                f2: report.complete.macro_f2,
                roc: report.complete.roc_auc,
                f2_u: report.no_uncertain.macro_f2,
                roc_u: report.no_uncertain.roc_auc,
                uncertain: report.uncertain_fraction,
                candidates,
            });
        }
    }

    let summary = PipelineSummary { rows, provenance };
    write(&layout.summary("json"), serde_json::to_string_pretty(&summary)?).map_err(|e| e.in_stage("summary"))?;
    write(&layout.summary("md"), summary.to_markdown()).map_err(|e| e.in_stage("summary"))?;
    Ok(summary)
}

/// Runs the four candidate searches on the training sets given by
/// `train_for` and keeps the best cross-validated score; ties go to the
/// earlier entry of [`CANDIDATES`].
fn select_model<'a>(
    config: &PipelineConfig,
    layout: &RunLayout,
    provenance: &Provenance,
    train_for: impl Fn(FeatureForm) -> &'a Dataset,
) -> Result<(Forest, Vec<CandidateScore>, FeatureForm)> {
    let mut best: Option<(Forest, f64, FeatureForm)> = None;
    let mut scores = Vec::new();
    for (kind, form) in CANDIDATES {
        let train = train_for(form);
        let spec = search_spec_for(config, train.id, kind);
        let result = random_search(train, &spec)?;
        let log_path = layout.search_log(train.id, kind);
        ensure_parent(&log_path)?;
        write_search_log(&result, &log_path)?;
        scores.push(CandidateScore {
            kind,
            form,
            cv_score: result.best_score,
            cv_threshold: result.best_threshold,
        });
        if best.as_ref().is_none_or(|(_, s, _)| result.best_score > *s) {
            best = Some((result.forest, result.best_score, form));
        }
    }
    let (mut forest, _, form) = best.expect("four candidates were searched");
    forest.provenance = Some(provenance.clone());
    Ok((forest, scores, form))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub checked: Vec<PathBuf>,
    pub config_hash: String,
}

/// Recomputes the hash of the run's stored config and checks it against
/// the provenance block of every model, report and summary in the run.
pub fn verify_run(dir: &Path) -> Result<VerifyOutcome> {
    let layout = RunLayout::new(dir);
    let config = PipelineConfig::load(&layout.config())?;
    let expected = config.hash()?;
    let mut artifacts = vec![layout.summary("json")];
    for sub in ["models", "reports"] {
        let d = dir.join(sub);
        let entries = fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        artifacts.extend(paths);
    }
    for path in &artifacts {
        verify_artifact(path, &expected)?;
    }
    Ok(VerifyOutcome {
        checked: artifacts,
        config_hash: expected,
    })
}

/// Checks that the artifact at `path` carries a provenance block whose
/// config hash equals `expected`.
pub fn verify_artifact(path: &Path, expected: &str) -> Result<Provenance> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let p = read_provenance(&text).map_err(|e| Error::Provenance(format!("{}: {e}", path.display())))?;
    if p.config_hash != expected {
        return Err(Error::Provenance(format!(
            "{} was produced with config {} but the config hashes to {expected}",
            path.display(),
            p.config_hash
        )));
    }
    Ok(p)
}
