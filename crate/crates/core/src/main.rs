use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use log::info;

use prognosis::cohort::{cohort_stats, ingest_cohort, write_events_file, CohortFile};
use prognosis::dataset::{build_day_datasets, stratified_split_by_phase, Dataset, FeatureTable, Slice, SplitAssignment};
use prognosis::evaluation::{emit_report, evaluate};
use prognosis::pipeline::{run_pipeline, verify_artifact, verify_run, PipelineConfig, RunLayout};
use prognosis::provenance::{config_hash, Provenance};
use prognosis::registry::Registry;
use prognosis::selection::{random_search, write_search_log, SearchSpec};
use prognosis::snapshot::{build_snapshot, feature_names, DayConfig, FeatureForm, SnapshotOptions};
use prognosis::synth::{generate, inject_sparsity, GeneratorSpec, Sparsity};
use prognosis::tree::{EnsembleKind, Forest};
use prognosis::uncertainty::apply_threshold;
use prognosis::{Error, Result};

#[derive(Parser)]
#[command(name = "prognosis", version, about = "Per-day prognosis models from longitudinal lab findings")]
struct Cli {
    /// Pipeline config (JSON); supplies defaults for every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event file.
    Synth(SynthArgs),
    /// Validate an event file into a cohort file.
    Ingest(IngestArgs),
    /// Stratified per-phase train/test assignment of patients.
    Split(SplitArgs),
    /// Print one patient's snapshot as JSON.
    Snapshot(SnapshotArgs),
    /// Write per-day train/test dataset CSVs.
    BuildDatasets(BuildArgs),
    /// Random search with cross-validated threshold optimization.
    Train(TrainArgs),
    /// Score a model on a labeled dataset.
    Evaluate(EvaluateArgs),
    /// Triage predictions for unlabeled snapshots.
    Predict(PredictArgs),
    /// Check artifact provenance against a config.
    Verify(VerifyArgs),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    patients: Option<usize>,
    /// HCP mortality multiplier.
    #[arg(long)]
    drift: Option<f64>,
    /// MCP mortality.
    #[arg(long)]
    mortality: Option<f64>,
    #[arg(long)]
    phase_mix: Option<f64>,
    /// Generator spec (JSON); flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Drop each finding with this probability after generation.
    #[arg(long, default_value_t = 0.0)]
    sparsity: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    registry: Option<PathBuf>,
    /// First admission date of the moderate-contagion phase.
    #[arg(long)]
    boundary: Option<NaiveDate>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SnapshotArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    patient: String,
    /// Day number or `end`.
    #[arg(long)]
    day: DayConfig,
    #[arg(long, default_value = "num")]
    form: FeatureForm,
    #[arg(long)]
    trend_threshold: Option<f64>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// hcp, mcp or all; repeatable.
    #[arg(long = "phase")]
    phases: Vec<Slice>,
    /// num or cat; repeatable.
    #[arg(long = "form")]
    forms: Vec<FeatureForm>,
    /// Day numbers or `end`; repeatable.
    #[arg(long = "day")]
    days: Vec<DayConfig>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    configs: Option<usize>,
    #[arg(long)]
    max_u: Option<f64>,
    /// `auto` or a fold count.
    #[arg(long, default_value = "auto")]
    folds: String,
    #[arg(long)]
    n_thresholds: Option<usize>,
    /// Restrict the search to RF or ET.
    #[arg(long)]
    kind: Option<EnsembleKind>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    markdown: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run directory produced by `pipeline`.
    #[arg(long, conflicts_with = "artifact")]
    run_dir: Option<PathBuf>,
    /// Single artifact, checked against `--config`.
    #[arg(long)]
    artifact: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Event CSV to use instead of a synthetic cohort.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long)]
    configs: Option<usize>,
}

struct Context {
    config: Option<PipelineConfig>,
    seed: Option<u64>,
    threads: Option<usize>,
    out_dir: Option<PathBuf>,
}

impl Context {
    fn seed(&self) -> Result<u64> {
        self.seed
            .or(self.config.as_ref().map(|c| c.seed))
            .ok_or_else(|| Error::Config("a seed is required: pass --seed or a --config with `seed`".into()))
    }

    fn out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or(self.config.as_ref().map(|c| c.out_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    fn out_path(&self, explicit: Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit.unwrap_or_else(|| self.out_dir().join(default_name))
    }

    fn registry(&self, explicit: Option<&Path>) -> Result<Registry> {
        match explicit.or(self.config.as_ref().and_then(|c| c.registry.as_deref())) {
            Some(p) => Registry::load(p),
            None => Ok(Registry::default()),
        }
    }

    fn base_config(&self) -> PipelineConfig {
        self.config.clone().unwrap_or_else(|| PipelineConfig::new(0))
    }

    fn install<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads.unwrap_or(0))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(f)
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| Error::Io {
            path: d.to_path_buf(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn synth(ctx: &Context, a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => GeneratorSpec::load(p)?,
        None => ctx.config.as_ref().map(|c| c.synth.clone()).unwrap_or_default(),
    };
    spec.seed = ctx.seed()?;
    if let Some(n) = a.patients {
        spec.n_patients = n;
    }
    if let Some(d) = a.drift {
        spec.drift_factor = d;
    }
    if let Some(m) = a.mortality {
        spec.base_mortality = m;
    }
    if let Some(m) = a.phase_mix {
        spec.phase_mix = m;
    }
    let mut records = ctx.install(|| generate(&spec))?;
    if a.sparsity > 0.0 {
        records = inject_sparsity(&records, &Sparsity::uniform(a.sparsity, spec.min_events), spec.seed)?;
    }
    let out = ctx.out_path(a.out, "events.csv");
    ensure_parent(&out)?;
    write_events_file(&records, &out)?;
    info!("wrote {} patients to {}", records.len(), out.display());
    Ok(())
}

fn ingest(ctx: &Context, a: IngestArgs) -> Result<()> {
    let registry = ctx.registry(a.registry.as_deref())?;
    let boundary = a.boundary.unwrap_or(ctx.base_config().boundary);
    let report = ingest_cohort(&a.input, &registry)?;
    for d in &report.diagnostics {
        eprintln!("line {}: {:?}: {}", d.line, d.kind, d.message);
    }
    let stats = cohort_stats(&report.records, boundary)?;
    let out = ctx.out_path(a.out, "cohort.json");
    ensure_parent(&out)?;
    CohortFile::new(boundary, registry, report.records).save(&out)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn split(ctx: &Context, a: SplitArgs) -> Result<()> {
    let cohort = CohortFile::load(&a.cohort)?;
    let fraction = a.test_fraction.unwrap_or(ctx.base_config().test_fraction);
    let split = stratified_split_by_phase(&cohort.patients, cohort.boundary, fraction, ctx.seed()?)?;
    let out = ctx.out_path(a.out, "split.csv");
    ensure_parent(&out)?;
    split.save(&out)?;
    info!("wrote {} assignments to {}", split.assignment.len(), out.display());
    Ok(())
}

fn snapshot(ctx: &Context, a: SnapshotArgs) -> Result<()> {
    let cohort = CohortFile::load(&a.cohort)?;
    let record = cohort
        .patients
        .iter()
        .find(|r| r.patient_id == a.patient)
        .ok_or_else(|| Error::InvalidInput(format!("patient {} not in cohort", a.patient)))?;
    let options = SnapshotOptions {
        form: a.form,
        trend_threshold: a.trend_threshold.unwrap_or(ctx.base_config().trend_threshold),
    };
    let snap = build_snapshot(record, &cohort.registry, a.day, options)?;
    let out = match snap {
        None => serde_json::json!({ "patient_id": a.patient, "snapshot": null }),
        Some(s) => {
            let features: serde_json::Map<String, serde_json::Value> = feature_names(&cohort.registry, a.day)
                .into_iter()
                .zip(&s.features)
                .map(|(n, v)| (n, serde_json::json!(v)))
                .collect();
            serde_json::json!({
                "patient_id": s.patient_id,
                "snapshot_day": s.snapshot_day,
                "label": s.label,
                "features": features,
            })
        }
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn build_datasets(ctx: &Context, a: BuildArgs) -> Result<()> {
    let base = ctx.base_config();
    let cohort = CohortFile::load(&a.cohort)?;
    let split = SplitAssignment::load(&a.split)?;
    let phases = if a.phases.is_empty() { base.slices.clone() } else { a.phases };
    let forms = if a.forms.is_empty() { FeatureForm::ALL.to_vec() } else { a.forms };
    let days = if a.days.is_empty() { base.day_configs.clone() } else { a.days };
    let layout = RunLayout::new(&ctx.out_dir());
    for &phase in &phases {
        for &form in &forms {
            let sets = build_day_datasets(
                &cohort.patients,
                cohort.boundary,
                &cohort.registry,
                &split,
                phase,
                form,
                &days,
                base.trend_threshold,
            )?;
            for d in sets {
                for (side, ds) in [("train", &d.train), ("test", &d.test)] {
                    let path = layout.dataset(ds.id, side);
                    ensure_parent(&path)?;
                    ds.save_csv(&path)?;
                    info!("{}: {} rows", path.display(), ds.len());
                }
            }
        }
    }
    Ok(())
}

fn train(ctx: &Context, a: TrainArgs) -> Result<()> {
    let dataset = Dataset::load_csv(&a.dataset, None)?;
    let mut spec = match &ctx.config {
        Some(c) => c.search.clone(),
        None => SearchSpec::default(),
    };
    spec.seed = ctx.seed()?;
    if let Some(n) = a.configs {
        spec.n_configs = n;
    }
    if let Some(u) = a.max_u {
        spec.max_u = u;
    }
    if let Some(n) = a.n_thresholds {
        spec.n_thresholds = n;
    }
    spec.folds = match a.folds.as_str() {
        "auto" => None,
        k => Some(
            k.parse()
                .map_err(|_| Error::Config(format!("--folds must be `auto` or a number, got `{k}`")))?,
        ),
    };
    if let Some(kind) = a.kind {
        spec.space = spec.space.only(kind);
    }
    let result = ctx.install(|| random_search(&dataset, &spec))?;
    let mut forest = result.forest.clone();
    forest.provenance = Some(Provenance::new(config_hash(&spec)?, spec.seed));
    ensure_parent(&a.out)?;
    forest.save(&a.out)?;
    if let Some(log) = &a.log {
        ensure_parent(log)?;
        write_search_log(&result, log)?;
    }
    println!(
        "best config #{} ({}) cv macro-F2 {:.4} threshold {:.4} over {} folds; {} failed",
        result.best_index,
        result.best_config.kind,
        result.best_score,
        result.best_threshold,
        result.k_folds,
        result.failures.len()
    );
    Ok(())
}

fn evaluate_cmd(_ctx: &Context, a: EvaluateArgs) -> Result<()> {
    let forest = Forest::load(&a.model)?;
    let dataset = Dataset::load_csv(&a.dataset, None)?;
    let report = evaluate(&forest, &dataset)?;
    ensure_parent(&a.out)?;
    if let Some(md) = &a.markdown {
        ensure_parent(md)?;
    }
    emit_report(&report, &a.out, a.markdown.as_deref())?;
    println!(
        "macro-F2 {:.4} (no uncertain {:.4}), uncertain {:.1}%",
        report.complete.macro_f2,
        report.no_uncertain.macro_f2,
        100.0 * report.uncertain_fraction
    );
    Ok(())
}

fn predict(_ctx: &Context, a: PredictArgs) -> Result<()> {
    let forest = Forest::load(&a.model)?;
    let table = FeatureTable::load_csv(&a.input)?;
    if table.feature_names != forest.feature_names {
        return Err(Error::WidthMismatch {
            expected: forest.width(),
            actual: table.feature_names.len(),
        });
    }
    let predictions = apply_threshold(&forest, &table.rows)?;
    ensure_parent(&a.out)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record(["patient_id", "p_alive", "p_dead", "label"])?;
    for (id, p) in table.patient_ids.iter().zip(&predictions) {
        w.write_record([id.as_str(), &p.p_alive.to_string(), &p.p_dead.to_string(), p.label.as_str()])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    Ok(())
}

fn verify(ctx: &Context, a: VerifyArgs) -> Result<()> {
    match (a.run_dir, a.artifact) {
        (Some(dir), _) => {
            let outcome = verify_run(&dir)?;
            println!("ok: {} artifacts match config {}", outcome.checked.len(), outcome.config_hash);
        }
        (None, Some(artifact)) => {
            if ctx.config.is_none() {
                return Err(Error::Config("--artifact needs --config".into()));
            }
            let mut config = ctx.base_config();
            config.seed = ctx.seed()?;
            config.out_dir = ctx.out_dir();
            let p = verify_artifact(&artifact, &config.hash()?)?;
            println!("ok: {} matches config {}", artifact.display(), p.config_hash);
        }
        (None, None) => {
            let dir = ctx.out_dir();
            let outcome = verify_run(&dir)?;
            println!("ok: {} artifacts match config {}", outcome.checked.len(), outcome.config_hash);
        }
    }
    Ok(())
}

fn pipeline(ctx: &Context, a: PipelineArgs) -> Result<()> {
    let mut config = ctx.base_config();
    config.seed = ctx.seed()?;
    config.out_dir = ctx.out_dir();
    if let Some(input) = a.input {
        config.input = Some(input);
    }
    if let Some(n) = a.patients {
        config.synth.n_patients = n;
    }
    if let Some(n) = a.configs {
        config.search.n_configs = n;
    }
    let summary = run_pipeline(&config, ctx.threads)?;
    print!("{}", summary.to_markdown());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref().map(PipelineConfig::load).transpose()?;
    let ctx = Context {
        config,
        seed: cli.seed,
        threads: cli.threads,
        out_dir: cli.out_dir,
    };
    match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::Snapshot(a) => snapshot(&ctx, a),
        Command::BuildDatasets(a) => build_datasets(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Evaluate(a) => evaluate_cmd(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::Verify(a) => verify(&ctx, a),
        Command::Pipeline(a) => pipeline(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
