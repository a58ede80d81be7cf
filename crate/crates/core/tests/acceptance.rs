//! Acceptance harness: one PASS/FAIL line per criterion, nonzero exit on
//! any failure.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prognosis::cohort::{Label, PatientRecord};
use prognosis::dataset::{build_day_datasets, stratified_split_by_phase, Dataset, DatasetId, DayDatasets, Slice};
use prognosis::evaluation::{evaluate, EvalReport};
use prognosis::metrics::{macro_f2, roc_auc};
use prognosis::pipeline::{run_pipeline, PipelineConfig};
use prognosis::registry::Registry;
use prognosis::selection::{random_search, stratified_kfold, training_side, SearchSpace, SearchSpec};
use prognosis::snapshot::{DayConfig, FeatureForm};
use prognosis::synth::{generate, GeneratorSpec};
use prognosis::tree::{
    best_split_rf, fit, leaf_probability, learn_imputation, EnsembleKind, Forest, HyperConfig, Imputation, Node,
    Probabilities,
};
use prognosis::uncertainty::find_uncertain_threshold;

use common::{auc_concordance, random_labels, random_probs, split_oracle, threshold_oracle};

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn threshold_oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let instances = 1000;
    for case in 0..instances {
        let len = rng.random_range(1..=200);
        let n = rng.random_range(1..=1000);
        let max_u = rng.random_range(0.01..0.99);
        let labels = random_labels(&mut rng, len);
        let probs = random_probs(&mut rng, len);
        let got = find_uncertain_threshold(&labels, &probs, max_u, n, macro_f2).map_err(|e| e.to_string())?;
        let want = threshold_oracle(&labels, &probs, max_u, n, macro_f2);
        ensure(
            got.score.to_bits() == want.0.to_bits() && got.threshold.to_bits() == want.1.to_bits(),
            || format!("case {case}: got ({}, {}), oracle {want:?}", got.score, got.threshold),
        )?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{instances} instances exact in {:.2}s", elapsed.as_secs_f64()))
}

fn four_sample_forest() -> Forest {
    let leaf = |a, d| Box::new(Node::Leaf { counts: [a, d] });
    let tree = Node::Split {
        feature: 0,
        cut: 1.5,
        left: Box::new(Node::Split {
            feature: 0,
            cut: 0.5,
            left: leaf(9, 1),
            right: leaf(9, 11),
        }),
        right: Box::new(Node::Split {
            feature: 0,
            cut: 2.5,
            left: leaf(2, 3),
            right: leaf(1, 19),
        }),
    };
    Forest {
        format_version: Forest::FORMAT_VERSION,
        ensemble_kind: EnsembleKind::RandomForest,
        hyper: HyperConfig::single_tree(1),
        feature_names: vec!["x".into()],
        imputation_values: vec![-1.0],
        threshold: None,
        trees: vec![tree],
        provenance: None,
    }
}

fn hand_trace() -> Check {
    use Label::{Alive as A, Dead as D};
    let labels = [A, A, D, D];
    let probs = [(0.9, 0.1), (0.45, 0.55), (0.4, 0.6), (0.05, 0.95)].map(|(a, d)| Probabilities::new(a, d));
    let r = find_uncertain_threshold(&labels, &probs, 0.3, 10, macro_f2).map_err(|e| e.to_string())?;
    ensure(r.score == 1.0 && r.threshold == 0.55, || format!("got {r:?}"))?;

    // One-feature tree reproducing the same four probability pairs.
    let mut forest = four_sample_forest();
    forest.threshold = Some(r.threshold);
    let dataset = Dataset {
        id: DatasetId {
            phase: Slice::Hcp,
            day: DayConfig::Day(2),
            form: FeatureForm::Numerical,
        },
        feature_names: vec!["x".into()],
        rows: (0..4).map(|i| vec![Some(f64::from(i))]).collect(),
        labels: labels.to_vec(),
        patient_ids: (0..4).map(|i| format!("p{i}")).collect(),
    };
    let got = forest.predict_proba_batch(&dataset.rows).map_err(|e| e.to_string())?;
    let same = got
        .iter()
        .zip(&probs)
        .all(|(g, p)| (g.dead - p.dead).abs() <= 1e-12 && (g.alive - p.alive).abs() <= 1e-12);
    ensure(same, || format!("tree probabilities {got:?}"))?;
    let report = evaluate(&forest, &dataset).map_err(|e| e.to_string())?;
    ensure((report.complete.macro_f2 - 0.7323).abs() <= 1e-4, || {
        format!("complete macro-F2 {}", report.complete.macro_f2)
    })?;
    ensure(report.uncertain_fraction == 0.25, || {
        format!("uncertain fraction {}", report.uncertain_fraction)
    })?;
    Ok(format!(
        "score {} threshold {} macro-F2 {:.4} uncertain {}",
        r.score, r.threshold, report.complete.macro_f2, report.uncertain_fraction
    ))
}

fn split_oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let datasets = 200;
    let mut with_split = 0;
    for case in 0..datasets {
        let n = rng.random_range(1..=30);
        let width = rng.random_range(1..=4);
        let coarse = rng.random_bool(0.6);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..width)
                    .map(|_| {
                        if coarse {
                            f64::from(rng.random_range(-3..=3i32))
                        } else {
                            rng.random_range(-10.0..10.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let labels = random_labels(&mut rng, n);
        let mut features: Vec<usize> = (0..width).filter(|_| rng.random_bool(0.7)).collect();
        if features.is_empty() {
            features.push(rng.random_range(0..width));
        }
        let got = best_split_rf(&rows, &labels, &features);
        let want = split_oracle(&rows, &labels, &features);
        match (&got, &want) {
            (None, None) => {}
            (Some(g), Some(w)) => {
                with_split += 1;
                let impurity = num_rational::Ratio::new(g.impurity.num as i128, g.impurity.den as i128);
                ensure(
                    g.feature == w.feature && g.cut.to_bits() == w.cut.to_bits() && impurity == w.impurity,
                    || format!("case {case}: got {g:?}, oracle {w:?}"),
                )?;
            }
            _ => return Err(format!("case {case}: got {got:?}, oracle {want:?}")),
        }
    }
    Ok(format!("{datasets} datasets exact ({with_split} with a split)"))
}

fn auc_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    while instances < 500 {
        let n = rng.random_range(2..=300);
        let labels = random_labels(&mut rng, n);
        if !labels.contains(&Label::Dead) || !labels.contains(&Label::Alive) {
            continue;
        }
        let scores: Vec<f64> = random_probs(&mut rng, n).iter().map(|p| p.dead).collect();
        let got = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        let want = auc_concordance(&scores, &labels);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-12, || format!("instance {instances}: {got} vs {want}"))?;
        instances += 1;
    }
    Ok(format!("500 instances, max deviation {worst:e}"))
}

fn walk<'a>(mut node: &'a Node, row: &[f64]) -> [u32; 2] {
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

fn ensemble_semantics() -> Check {
    // Exact leaf probability on constructed counts.
    for tp in 0..40u32 {
        for fp in 0..40u32 {
            if tp + fp == 0 {
                continue;
            }
            let want = f64::from(tp) / f64::from(tp + fp);
            ensure(leaf_probability([fp, tp], Label::Dead) == want, || format!("leaf [{fp}, {tp}]"))?;
        }
    }
    let constructed = four_sample_forest();
    for x in 0..4 {
        let [a, d] = walk(&constructed.trees[0], &[f64::from(x)]);
        let p = constructed.predict_proba(&[Some(f64::from(x))]).map_err(|e| e.to_string())?;
        ensure(p.dead == f64::from(d) / f64::from(a + d), || format!("constructed x={x}: {p:?}"))?;
    }

    // Mean of per-tree leaf probabilities on fitted forests.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let n = rng.random_range(20..120);
        let width = rng.random_range(1..6);
        let rows: Vec<Vec<Option<f64>>> = (0..n)
            .map(|_| (0..width).map(|_| Some(rng.random_range(0.0..5.0f64).round())).collect())
            .collect();
        let labels = random_labels(&mut rng, n);
        let ds = Dataset {
            id: DatasetId {
                phase: Slice::All,
                day: DayConfig::End,
                form: FeatureForm::Numerical,
            },
            feature_names: (0..width).map(|j| format!("f{j}")).collect(),
            rows: rows.clone(),
            labels,
            patient_ids: (0..n).map(|i| format!("p{i}")).collect(),
        };
        let kind = if case % 2 == 0 {
            EnsembleKind::RandomForest
        } else {
            EnsembleKind::ExtraTrees
        };
        let hyper = HyperConfig {
            kind,
            n_trees: rng.random_range(1..25),
            max_depth: Some(rng.random_range(1..8)),
            min_samples_leaf: rng.random_range(1..4),
            max_features: rng.random_range(1..=width),
            bootstrap: rng.random_bool(0.5),
            imputation: Imputation::Mean,
            criterion: Default::default(),
            seed: case,
        };
        let forest = fit(&ds, &hyper).map_err(|e| e.to_string())?;
        for row in &rows {
            let dense: Vec<f64> = row.iter().map(|v| v.unwrap()).collect();
            let per_tree: Vec<f64> = forest
                .trees
                .iter()
                .map(|t| {
                    let [a, d] = walk(t, &dense);
                    f64::from(d) / f64::from(a + d)
                })
                .collect();
            let mean = per_tree.iter().sum::<f64>() / per_tree.len() as f64;
            let p = forest.predict_proba(row).map_err(|e| e.to_string())?;
            worst = worst.max((p.dead - mean).abs());
            ensure((p.dead - mean).abs() <= 1e-12 && (p.alive - (1.0 - mean)).abs() <= 1e-12, || {
                format!("case {case}: {p:?} vs mean {mean}")
            })?;
        }
    }
    Ok(format!("leaf probabilities exact; forest mean deviation {worst:e}"))
}

fn cohort(seed: u64) -> prognosis::Result<Vec<PatientRecord>> {
    generate(&GeneratorSpec {
        seed,
        n_patients: 2000,
        drift_factor: 2.0,
        base_mortality: 0.11,
        ..GeneratorSpec::default()
    })
}

fn no_leakage() -> Check {
    let config = PipelineConfig::new(11);
    let records = cohort(11).map_err(|e| e.to_string())?;
    let registry = Registry::default();
    let split = stratified_split_by_phase(&records, config.boundary, 0.2, 11).map_err(|e| e.to_string())?;

    let mut day_sets = 0;
    for slice in [Slice::Hcp, Slice::Mcp, Slice::All] {
        for form in FeatureForm::ALL {
            let sets = build_day_datasets(
                &records,
                config.boundary,
                &registry,
                &split,
                slice,
                form,
                &DayConfig::STANDARD,
                config.trend_threshold,
            )
            .map_err(|e| e.to_string())?;
            for d in &sets {
                let train: HashSet<&str> = d.train.patient_ids.iter().map(String::as_str).collect();
                let overlap = d.test.patient_ids.iter().filter(|p| train.contains(p.as_str())).count();
                ensure(overlap == 0, || format!("{}: {overlap} shared ids", d.train.id))?;
                day_sets += 1;
            }
        }
    }

    // Fold fit/validate row ids.
    let hcp = build_day_datasets(
        &records,
        config.boundary,
        &registry,
        &split,
        Slice::Hcp,
        FeatureForm::Numerical,
        &[DayConfig::Day(2)],
        config.trend_threshold,
    )
    .map_err(|e| e.to_string())?
    .remove(0);
    let train = &hcp.train;
    for k in [5, 10] {
        let folds = stratified_kfold(&train.labels, k, 3).map_err(|e| e.to_string())?;
        let mut seen = HashSet::new();
        for (j, fold) in folds.iter().enumerate() {
            let fit_rows: HashSet<usize> = training_side(&folds, j).into_iter().collect();
            ensure(fold.iter().all(|r| !fit_rows.contains(r)), || format!("k={k} fold {j} overlaps"))?;
            ensure(fold.iter().all(|r| seen.insert(*r)), || format!("k={k} fold {j} repeats rows"))?;
        }
        ensure(seen.len() == train.len(), || format!("k={k} folds miss rows"))?;
    }

    // Imputation values: perturbing held-out rows must not move them.
    let perturb = |ds: &Dataset, rows: &[usize]| {
        let mut out = ds.clone();
        for &i in rows {
            for (j, v) in out.rows[i].iter_mut().enumerate() {
                *v = if j % 3 == 0 { None } else { Some(1e6 + j as f64) };
            }
        }
        out
    };
    let folds = stratified_kfold(&train.labels, 10, 3).map_err(|e| e.to_string())?;
    for strategy in [Imputation::Mean, Imputation::Median] {
        let hyper = HyperConfig {
            imputation: strategy,
            n_trees: 3,
            ..HyperConfig::single_tree(train.width())
        };
        let fit_rows = training_side(&folds, 0);
        let before = fit(&train.subset(&fit_rows), &hyper).map_err(|e| e.to_string())?;
        let after = fit(&perturb(train, &folds[0]).subset(&fit_rows), &hyper).map_err(|e| e.to_string())?;
        ensure(before.imputation_values == after.imputation_values, || {
            format!("{strategy}: fold imputation moved")
        })?;
        let expected = learn_imputation(&train.subset(&fit_rows).rows, train.width(), strategy);
        ensure(before.imputation_values == expected, || format!("{strategy}: not learned from fit rows"))?;
    }

    // Whole-cohort level: scramble every test patient's lab values.
    let test_ids: HashSet<&str> = split.ids(prognosis::dataset::Side::Test).collect();
    let mut scrambled = records.clone();
    for r in scrambled.iter_mut().filter(|r| test_ids.contains(r.patient_id.as_str())) {
        for e in r.events.iter_mut() {
            e.value = e.value * 50.0 + 7.0;
        }
    }
    let rebuild = |recs: &[PatientRecord]| -> prognosis::Result<DayDatasets> {
        Ok(build_day_datasets(
            recs,
            config.boundary,
            &registry,
            &split,
            Slice::Hcp,
            FeatureForm::Numerical,
            &[DayConfig::End],
            config.trend_threshold,
        )?
        .remove(0))
    };
    let clean = rebuild(&records).map_err(|e| e.to_string())?;
    let dirty = rebuild(&scrambled).map_err(|e| e.to_string())?;
    ensure(clean.train.rows == dirty.train.rows, || "train rows depend on test patients".into())?;
    ensure(clean.test.rows != dirty.test.rows, || "scramble had no effect".into())?;
    let hyper = HyperConfig {
        imputation: Imputation::Median,
        n_trees: 3,
        ..HyperConfig::single_tree(clean.train.width())
    };
    let a = fit(&clean.train, &hyper).map_err(|e| e.to_string())?;
    let b = fit(&dirty.train, &hyper).map_err(|e| e.to_string())?;
    ensure(a.imputation_values == b.imputation_values, || "imputation moved with test rows".into())?;

    Ok(format!("{day_sets} train/test pairs disjoint; folds disjoint; imputation train-only"))
}

/// Small search used by the directional checks: 8 configs over RF and ET
/// with 10 to 40 trees, 5-fold CV.
fn small_search(seed: u64) -> SearchSpec {
    SearchSpec {
        n_configs: 8,
        folds: Some(5),
        seed,
        space: SearchSpace {
            n_trees: [10, 40],
            ..SearchSpace::default()
        },
        ..SearchSpec::default()
    }
}

const DIRECTIONAL_SEEDS: u64 = 20;

/// Per cohort, per day config: HCP-specific, MCP-specific and pooled
/// models, all scored on their phase's test set (pooled on MCP).
struct CohortRun {
    hcp: Vec<EvalReport>,
    mcp: Vec<EvalReport>,
    pooled_on_mcp: Vec<EvalReport>,
}

fn cohort_run(seed: u64) -> prognosis::Result<CohortRun> {
    let records = cohort(seed)?;
    let config = PipelineConfig::new(seed);
    let split = stratified_split_by_phase(&records, config.boundary, config.test_fraction, seed)?;
    let sets = |slice| {
        build_day_datasets(
            &records,
            config.boundary,
            &Registry::default(),
            &split,
            slice,
            FeatureForm::Numerical,
            &DayConfig::STANDARD,
            config.trend_threshold,
        )
    };
    let (hcp, mcp, all) = (sets(Slice::Hcp)?, sets(Slice::Mcp)?, sets(Slice::All)?);
    let search = small_search(seed);
    let mut run = CohortRun {
        hcp: Vec::new(),
        mcp: Vec::new(),
        pooled_on_mcp: Vec::new(),
    };
    for ((h, m), a) in hcp.iter().zip(&mcp).zip(&all) {
        run.hcp.push(evaluate(&random_search(&h.train, &search)?.forest, &h.test)?);
        run.mcp.push(evaluate(&random_search(&m.train, &search)?.forest, &m.test)?);
        run.pooled_on_mcp.push(evaluate(&random_search(&a.train, &search)?.forest, &m.test)?);
    }
    Ok(run)
}

fn cohort_runs() -> &'static std::result::Result<Vec<CohortRun>, String> {
    static RUNS: OnceLock<std::result::Result<Vec<CohortRun>, String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (0..DIRECTIONAL_SEEDS)
            .map(|seed| cohort_run(seed).map_err(|e| format!("seed {seed}: {e}")))
            .collect()
    })
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// A run is one cohort; its F2 and F2-U are averaged over the
/// (phase, day) rows of its results table.
fn reject_option_benefit() -> Check {
    let runs = cohort_runs().as_ref().map_err(Clone::clone)?;
    let mut wins = 0;
    for run in runs {
        let rows = || run.hcp.iter().chain(&run.mcp);
        if mean(rows().map(|r| r.no_uncertain.macro_f2)) >= mean(rows().map(|r| r.complete.macro_f2)) {
            wins += 1;
        }
    }
    let mean_u = mean(runs.iter().flat_map(|r| r.hcp.iter().chain(&r.mcp)).map(|r| r.uncertain_fraction));
    let rate = f64::from(wins) / runs.len() as f64;
    let detail = format!(
        "F2-U >= F2 in {wins}/{} cohorts, mean test uncertain {mean_u:.3}",
        runs.len()
    );
    ensure(rate >= 0.8 && mean_u <= 0.30, || detail.clone())?;
    Ok(detail)
}

/// Paired per cohort: mean over day configs of MCP-specific minus pooled
/// macro-F2 on the MCP test set.
fn concept_drift_benefit() -> Check {
    let runs = cohort_runs().as_ref().map_err(Clone::clone)?;
    let diffs: Vec<f64> = runs
        .iter()
        .map(|r| mean(r.mcp.iter().zip(&r.pooled_on_mcp).map(|(s, p)| s.complete.macro_f2 - p.complete.macro_f2)))
        .collect();
    let gain = mean(diffs.iter().copied());
    let ahead = diffs.iter().filter(|d| **d >= 0.0).count();
    let detail = format!(
        "mean MCP-test macro-F2 gain {gain:+.4} (phase-specific ahead or tied in {ahead}/{})",
        diffs.len()
    );
    ensure(gain >= 0.0, || detail.clone())?;
    Ok(detail)
}

fn artifact_bytes(root: &Path) -> std::io::Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                // config.json records the output directory itself.
                if rel != "config.json" {
                    out.insert(rel, std::fs::read(&path)?);
                }
            }
        }
    }
    Ok(out)
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = PipelineConfig::new(23);
    config.synth.n_patients = 600;
    config.search.n_configs = 3;
    let mut runs = Vec::new();
    for (i, threads) in [1, 1, 2, 4].into_iter().enumerate() {
        config.out_dir = tmp.path().join(format!("run{i}"));
        run_pipeline(&config, Some(threads)).map_err(|e| e.to_string())?;
        runs.push((threads, artifact_bytes(&config.out_dir).map_err(|e| e.to_string())?));
    }
    let (_, reference) = &runs[0];
    let models = reference.keys().filter(|k| k.starts_with("models")).count();
    ensure(models > 0 && reference.contains_key("summary.json"), || "missing artifacts".into())?;
    for (threads, files) in &runs[1..] {
        ensure(files.keys().eq(reference.keys()), || format!("threads={threads}: file set differs"))?;
        for (name, bytes) in files {
            ensure(bytes == &reference[name], || format!("threads={threads}: {name} differs"))?;
        }
    }
    Ok(format!(
        "{} artifacts ({models} models) byte-identical across threads 1,1,2,4",
        reference.len()
    ))
}

fn desk_runtime() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = PipelineConfig::new(2024);
    config.out_dir = tmp.path().join("run");
    ensure(
        config.synth.n_patients == 2000 && config.search.n_configs == 64,
        || "default config drifted from the desk-scale target".into(),
    )?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let start = Instant::now();
    let summary = run_pipeline(&config, None).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let forms: HashSet<String> = summary
        .rows
        .iter()
        .flat_map(|r| r.candidates.iter().map(|c| format!("{:?}", c.form)))
        .collect();
    ensure(summary.rows.len() == 2 * DayConfig::STANDARD.len(), || {
        format!("{} summary rows", summary.rows.len())
    })?;
    ensure(forms.len() == 2, || format!("forms searched: {forms:?}"))?;
    ensure(elapsed < Duration::from_secs(30 * 60), || format!("took {elapsed:?} on {cores} cores"))?;
    Ok(format!("{:.1} min on {cores} core(s)", elapsed.as_secs_f64() / 60.0))
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(&str, fn() -> Check); 10] = [
        ("threshold oracle equivalence", threshold_oracle_equivalence),
        ("four-sample hand trace", hand_trace),
        ("split oracle equivalence", split_oracle_equivalence),
        ("ROC-AUC oracle", auc_oracle),
        ("ensemble semantics", ensemble_semantics),
        ("no-leakage audits", no_leakage),
        ("reject-option benefit", reject_option_benefit),
        ("concept-drift benefit", concept_drift_benefit),
        ("pipeline determinism", determinism),
        ("desk-scale runtime", desk_runtime),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if filter.as_ref().is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
