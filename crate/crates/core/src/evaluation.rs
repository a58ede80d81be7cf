//! Held-out evaluation, with and without the uncertain predictions.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::Label;
use crate::dataset::{Dataset, DatasetId};
use crate::error::{Error, Result};
use crate::metrics::{roc_auc, ConfusionMatrix};
use crate::provenance::Provenance;
use crate::tree::{Forest, Probabilities};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub alive: f64,
    pub dead: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub samples: usize,
    pub f2_per_class: ClassScores,
    pub macro_f2: f64,
    /// `None` when the view holds a single class.
    pub roc_auc: Option<f64>,
    pub confusion: ConfusionMatrix,
}

impl ViewMetrics {
    pub fn compute(truth: &[Label], probs: &[Probabilities]) -> Self {
        let predicted: Vec<Label> = probs.iter().map(Probabilities::label).collect();
        let confusion = ConfusionMatrix::from_labels(truth, &predicted);
        let [alive, dead] = confusion.f2_per_class();
        let scores: Vec<f64> = probs.iter().map(|p| p.dead).collect();
        ViewMetrics {
            samples: truth.len(),
            f2_per_class: ClassScores { alive, dead },
            macro_f2: confusion.macro_f2(),
            roc_auc: roc_auc(&scores, truth).ok(),
            confusion,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: DatasetId,
    pub model: String,
    pub threshold: Option<f64>,
    /// Every sample, uncertain ones scored by their most probable class.
    pub complete: ViewMetrics,
    /// Only samples whose top-class probability exceeds the threshold.
    pub no_uncertain: ViewMetrics,
    pub uncertain_fraction: f64,
    pub provenance: Provenance,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let pct = |x: f64| format!("{:.1}", 100.0 * x);
        let auc = |x: Option<f64>| x.map_or("n/a".to_string(), pct);
        let _ = writeln!(md, "# Evaluation `{}`\n", self.dataset);
        let _ = writeln!(md, "- model: {}", self.model);
        let _ = writeln!(
            md,
            "- threshold: {}",
            self.threshold.map_or("none".into(), |t| format!("{t:.4}"))
        );
        let _ = writeln!(md, "- uncertain: {}%", pct(self.uncertain_fraction));
        let _ = writeln!(
            md,
            "- provenance: {} {} config {} seed {}\n",
            self.provenance.tool, self.provenance.tool_version, self.provenance.config_hash, self.provenance.seed
        );
        for (title, v) in [("Complete", &self.complete), ("No Unc", &self.no_uncertain)] {
            let _ = writeln!(md, "## {title}\n");
            let _ = writeln!(md, "| samples | F2 alive | F2 dead | macro F2 | ROC-AUC |");
            let _ = writeln!(md, "|---|---|---|---|---|");
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} |\n",
                v.samples,
                pct(v.f2_per_class.alive),
                pct(v.f2_per_class.dead),
                pct(v.macro_f2),
                auc(v.roc_auc)
            );
            let c = &v.confusion;
            let _ = writeln!(md, "| actual \\ predicted | alive | dead |");
            let _ = writeln!(md, "|---|---|---|");
            let _ = writeln!(md, "| alive | {} | {} |", c.tn, c.fp);
            let _ = writeln!(md, "| dead | {} | {} |\n", c.fn_, c.tp);
        }
        md
    }
}

/// Scores `forest` on `dataset`. ROC-AUC always uses the raw dead-class
/// probability; the no-uncertain view drops samples with top-class
/// probability `<= threshold` (none when the model has no threshold).
pub fn evaluate(forest: &Forest, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput(format!("test set {} is empty", dataset.id)));
    }
    if dataset.width() != forest.width() {
        return Err(Error::WidthMismatch {
            expected: forest.width(),
            actual: dataset.width(),
        });
    }
    let probs = forest.predict_proba_batch(&dataset.rows)?;
    let complete = ViewMetrics::compute(&dataset.labels, &probs);

    let (kept_truth, kept_probs): (Vec<Label>, Vec<Probabilities>) = dataset
        .labels
        .iter()
        .zip(&probs)
        .filter(|(_, p)| forest.threshold.map_or(true, |t| p.max() > t))
        .map(|(l, p)| (*l, *p))
        .unzip();
    let no_uncertain = ViewMetrics::compute(&kept_truth, &kept_probs);
    let uncertain_fraction = 1.0 - kept_truth.len() as f64 / dataset.len() as f64;

    let provenance = match &forest.provenance {
        Some(p) => p.clone(),
        None => Provenance::for_config(&forest.hyper, forest.hyper.seed)?,
    };
    Ok(EvalReport {
        dataset: dataset.id,
        model: forest.ensemble_kind.short().to_string(),
        threshold: forest.threshold,
        complete,
        no_uncertain,
        uncertain_fraction,
        provenance,
    })
}

/// Writes the JSON rendering to `json_path` and, when given, the Markdown
/// rendering to `markdown_path`.
pub fn emit_report(report: &EvalReport, json_path: &Path, markdown_path: Option<&Path>) -> Result<()> {
    std::fs::write(json_path, report.to_json()?).map_err(|e| Error::io(json_path, e))?;
    if let Some(md) = markdown_path {
        std::fs::write(md, report.to_markdown()).map_err(|e| Error::io(md, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Slice;
    use crate::snapshot::{DayConfig, FeatureForm};
    use crate::tree::{HyperConfig, Node};
    use Label::{Alive as A, Dead as D};

    /// One tree whose four leaves yield P(dead) = .1, .55, .6, .95 for
    /// x = 0, 1, 2, 3.
    pub(crate) fn four_sample_forest() -> Forest {
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
            ensemble_kind: crate::tree::EnsembleKind::RandomForest,
            hyper: HyperConfig::single_tree(1),
            feature_names: vec!["x".into()],
            imputation_values: vec![-1.0],
            threshold: Some(0.55),
            trees: vec![tree],
            provenance: None,
        }
    }

    fn four_sample_dataset(day: DayConfig) -> Dataset {
        Dataset {
            id: DatasetId {
                phase: Slice::Hcp,
                day,
                form: FeatureForm::Numerical,
            },
            feature_names: vec!["x".into()],
            rows: (0..4).map(|i| vec![Some(f64::from(i))]).collect(),
            labels: vec![A, A, D, D],
            patient_ids: (0..4).map(|i| format!("p{i}")).collect(),
        }
    }

    #[test]
    fn four_sample_views() {
        let r = evaluate(&four_sample_forest(), &four_sample_dataset(DayConfig::Day(2))).unwrap();
        assert!((r.complete.macro_f2 - 0.7323).abs() < 1e-4);
        assert_eq!(r.no_uncertain.macro_f2, 1.0);
        assert_eq!(r.uncertain_fraction, 0.25);
        assert_eq!(r.complete.confusion.total(), 4);
        assert_eq!(r.no_uncertain.confusion.total(), 3);
        assert_eq!(r.complete.roc_auc, Some(1.0));
    }

    #[test]
    fn json_and_markdown() {
        let r = evaluate(&four_sample_forest(), &four_sample_dataset(DayConfig::End)).unwrap();
        let json = r.to_json().unwrap();
        assert!(json.contains("\"day\": \"end\""));
        assert_eq!(EvalReport::from_json(&json).unwrap(), r);
        let md = r.to_markdown();
        assert!(md.contains("## Complete"));
        assert!(md.contains("## No Unc"));
        assert_eq!(md.matches("| actual \\ predicted |").count(), 2);

        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v.as_object_mut().unwrap().remove("provenance");
        assert!(EvalReport::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn unwritable_path_errors() {
        let r = evaluate(&four_sample_forest(), &four_sample_dataset(DayConfig::End)).unwrap();
        let err = emit_report(&r, Path::new("/nonexistent-dir/x/report.json"), None);
        assert!(matches!(err, Err(Error::Io { .. })));
    }

    #[test]
    fn empty_test_set_errors() {
        let mut ds = four_sample_dataset(DayConfig::End);
        ds.rows.clear();
        ds.labels.clear();
        ds.patient_ids.clear();
        assert!(evaluate(&four_sample_forest(), &ds).is_err());
    }
}
