//! Per-day train/test datasets built from one patient-level stratified split.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::cohort::{assign_phase, Label, Phase, PatientRecord};
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::rng::{derive_seed, StreamRng};
use crate::snapshot::{build_snapshot, feature_names, DayConfig, FeatureForm, SnapshotOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Test,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Train => "train",
            Side::Test => "test",
        }
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Side::Train),
            "test" => Ok(Side::Test),
            other => Err(Error::InvalidInput(format!("assignment must be train or test, got `{other}`"))),
        }
    }
}

/// Patient-level train/test assignment shared by every day config.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub assignment: BTreeMap<String, Side>,
}

impl SplitAssignment {
    pub fn side(&self, patient_id: &str) -> Option<Side> {
        self.assignment.get(patient_id).copied()
    }

    pub fn ids(&self, side: Side) -> impl Iterator<Item = &str> + '_ {
        self.assignment
            .iter()
            .filter(move |(_, s)| **s == side)
            .map(|(id, _)| id.as_str())
    }

    pub fn merge(&mut self, other: SplitAssignment) {
        self.assignment.extend(other.assignment);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["patient_id", "assignment"])?;
        for (id, side) in &self.assignment {
            w.write_record([id.as_str(), side.as_str()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Loads a split file; the seed is not stored in the file and reads as 0.
    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut assignment = BTreeMap::new();
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let side = row.get(1).unwrap_or("").parse().map_err(|e: Error| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
            assignment.insert(row.get(0).unwrap_or("").to_string(), side);
        }
        Ok(SplitAssignment { seed: 0, assignment })
    }
}

/// Round-half-up of `fraction * n`.
fn test_count(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction + 0.5).floor().min(n as f64) as usize
}

/// Per-class random partition of the non-excluded `records`: each class
/// sends `round_half_up(fraction * class_size)` patients to the test side.
/// Deterministic in `seed` and independent of input order.
pub fn stratified_split(
    records: &[&PatientRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidInput(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut assignment = BTreeMap::new();
    for label in [Label::Alive, Label::Dead] {
        let mut ids: Vec<&str> = records
            .iter()
            .filter(|r| r.label() == Some(label))
            .map(|r| r.patient_id.as_str())
            .collect();
        if ids.len() < 2 {
            return Err(Error::TooFewSamples {
                class: label.as_str(),
                count: ids.len(),
                required: 2,
            });
        }
        ids.sort_unstable();
        let mut rng = StreamRng::seed_from_u64(derive_seed(seed, label.index() as u64));
        ids.shuffle(&mut rng);
        let n_test = test_count(ids.len(), test_fraction);
        for (i, id) in ids.into_iter().enumerate() {
            let side = if i < n_test { Side::Test } else { Side::Train };
            assignment.insert(id.to_string(), side);
        }
    }
    Ok(SplitAssignment { seed, assignment })
}

/// Stratified split run separately inside each phase, then merged. Phases
/// without members are skipped.
pub fn stratified_split_by_phase(
    records: &[PatientRecord],
    boundary: NaiveDate,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    let mut split = SplitAssignment {
        seed,
        assignment: BTreeMap::new(),
    };
    for phase in Phase::ALL {
        let members = crate::cohort::phase_members(records, boundary, phase);
        if members.is_empty() {
            continue;
        }
        let part = stratified_split(&members, test_fraction, derive_seed(seed, phase as u64))?;
        split.merge(part);
    }
    Ok(split)
}

/// Which patients a dataset draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slice {
    Hcp,
    Mcp,
    /// Both phases pooled.
    All,
}

impl Slice {
    pub fn admits(self, phase: Phase) -> bool {
        matches!(
            (self, phase),
            (Slice::All, _) | (Slice::Hcp, Phase::Hcp) | (Slice::Mcp, Phase::Mcp)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Slice::Hcp => "hcp",
            Slice::Mcp => "mcp",
            Slice::All => "all",
        }
    }
}

impl From<Phase> for Slice {
    fn from(p: Phase) -> Self {
        match p {
            Phase::Hcp => Slice::Hcp,
            Phase::Mcp => Slice::Mcp,
        }
    }
}

impl fmt::Display for Slice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Slice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hcp" => Ok(Slice::Hcp),
            "mcp" => Ok(Slice::Mcp),
            "all" => Ok(Slice::All),
            other => Err(Error::InvalidInput(format!("phase must be hcp, mcp or all, got `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetId {
    pub phase: Slice,
    pub day: DayConfig,
    pub form: FeatureForm,
}

impl DatasetId {
    /// `hcp-day4-num`, `mcp-end-cat`.
    pub fn stem(&self) -> String {
        format!("{}-{}-{}", self.phase, self.day.slug(), self.form.short())
    }

    /// Parses a file stem produced by [`DatasetId::stem`], optionally
    /// followed by `-train` / `-test`.
    pub fn from_stem(stem: &str) -> Option<Self> {
        let mut parts = stem.split('-');
        let phase = parts.next()?.parse().ok()?;
        let day = parts.next()?.parse().ok()?;
        let form = parts.next()?.parse().ok()?;
        Some(DatasetId { phase, day, form })
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.stem())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub id: DatasetId,
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
    pub labels: Vec<Label>,
    pub patient_ids: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for l in &self.labels {
            c[l.index()] += 1;
        }
        c
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            id: self.id,
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            patient_ids: indices.iter().map(|&i| self.patient_ids[i].clone()).collect(),
        }
    }

    /// Concatenates datasets with identical feature layouts.
    pub fn concat(id: DatasetId, parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("nothing to concatenate".into()))?;
        let mut out = Dataset {
            id,
            feature_names: first.feature_names.clone(),
            rows: Vec::new(),
            labels: Vec::new(),
            patient_ids: Vec::new(),
        };
        for p in parts {
            if p.feature_names != out.feature_names {
                return Err(Error::WidthMismatch {
                    expected: out.width(),
                    actual: p.width(),
                });
            }
            out.rows.extend(p.rows.iter().cloned());
            out.labels.extend(&p.labels);
            out.patient_ids.extend(p.patient_ids.iter().cloned());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.rows.len() || self.patient_ids.len() != self.rows.len() {
            return Err(Error::InvalidInput("dataset columns have different lengths".into()));
        }
        if let Some(row) = self.rows.iter().find(|r| r.len() != self.width()) {
            return Err(Error::WidthMismatch {
                expected: self.width(),
                actual: row.len(),
            });
        }
        Ok(())
    }

    /// CSV with `patient_id,label` followed by one column per feature;
    /// missing values are empty fields.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let header = ["patient_id", "label"]
            .into_iter()
            .chain(self.feature_names.iter().map(String::as_str));
        w.write_record(header)?;
        let mut record = Vec::with_capacity(self.width() + 2);
        for ((row, label), id) in self.rows.iter().zip(&self.labels).zip(&self.patient_ids) {
            record.clear();
            record.push(id.clone());
            record.push(label.as_str().to_string());
            record.extend(row.iter().map(|v| v.map_or(String::new(), |x| x.to_string())));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a dataset CSV. The id comes from the file stem when it follows
    /// the `phase-day-form[-side]` convention, otherwise from `fallback`.
    pub fn load_csv(path: &Path, fallback: Option<DatasetId>) -> Result<Dataset> {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(DatasetId::from_stem)
            .or(fallback)
            .unwrap_or(DatasetId {
                phase: Slice::All,
                day: DayConfig::End,
                form: FeatureForm::Numerical,
            });
        let parse_err = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut rdr = csv::Reader::from_path(path)?;
        let header = rdr.headers()?.clone();
        if header.len() < 3 || &header[0] != "patient_id" || &header[1] != "label" {
            return Err(parse_err(1, "expected header `patient_id,label,<features...>`".into()));
        }
        let feature_names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let mut ds = Dataset {
            id,
            feature_names,
            rows: Vec::new(),
            labels: Vec::new(),
            patient_ids: Vec::new(),
        };
        for row in rdr.records() {
            let row = row.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = row.position().map_or(0, |p| p.line());
            let label: Label = row[1].parse().map_err(|e: Error| parse_err(line, e.to_string()))?;
            let values = row
                .iter()
                .skip(2)
                .map(|f| {
                    if f.is_empty() {
                        Ok(None)
                    } else {
                        f.parse::<f64>()
                            .map(Some)
                            .map_err(|e| parse_err(line, format!("`{f}`: {e}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            ds.patient_ids.push(row[0].to_string());
            ds.labels.push(label);
            ds.rows.push(values);
        }
        Ok(ds)
    }
}

/// Unlabeled feature rows for prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub feature_names: Vec<String>,
    pub patient_ids: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl FeatureTable {
    /// Reads `patient_id[,label],<features...>`; a label column, when
    /// present, is ignored.
    pub fn load_csv(path: &Path) -> Result<FeatureTable> {
        let parse_err = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut rdr = csv::Reader::from_path(path)?;
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "patient_id" {
            return Err(parse_err(1, "expected header `patient_id[,label],<features...>`".into()));
        }
        let skip = if &header[1] == "label" { 2 } else { 1 };
        let mut table = FeatureTable {
            feature_names: header.iter().skip(skip).map(str::to_string).collect(),
            patient_ids: Vec::new(),
            rows: Vec::new(),
        };
        for row in rdr.records() {
            let row = row.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = row.position().map_or(0, |p| p.line());
            let values = row
                .iter()
                .skip(skip)
                .map(|f| match f {
                    "" => Ok(None),
                    f => f.parse::<f64>().map(Some).map_err(|e| parse_err(line, format!("`{f}`: {e}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            table.patient_ids.push(row[0].to_string());
            table.rows.push(values);
        }
        Ok(table)
    }
}

/// Snapshot dataset of `records` (already filtered to the wanted patients)
/// for a single day config, in input order.
pub fn snapshot_dataset(
    records: &[&PatientRecord],
    registry: &Registry,
    id: DatasetId,
    trend_threshold: f64,
) -> Result<Dataset> {
    let options = SnapshotOptions {
        form: id.form,
        trend_threshold,
    };
    let mut ds = Dataset {
        id,
        feature_names: feature_names(registry, id.day),
        rows: Vec::new(),
        labels: Vec::new(),
        patient_ids: Vec::new(),
    };
    for r in records {
        if let Some(s) = build_snapshot(r, registry, id.day, options)? {
            ds.rows.push(s.features);
            ds.labels.push(s.label);
            ds.patient_ids.push(s.patient_id);
        }
    }
    Ok(ds)
}

#[derive(Clone, Debug)]
pub struct DayDatasets {
    pub day: DayConfig,
    pub train: Dataset,
    pub test: Dataset,
}

/// Train/test pairs for every day config. A patient enters the day-`d`
/// datasets only while still hospitalized (`stay_length > d`); the end-day
/// datasets contain every patient. Sides always follow `split`.
#[allow(clippy::too_many_arguments)]
pub fn build_day_datasets(
    records: &[PatientRecord],
    boundary: NaiveDate,
    registry: &Registry,
    split: &SplitAssignment,
    slice: Slice,
    form: FeatureForm,
    day_configs: &[DayConfig],
    trend_threshold: f64,
) -> Result<Vec<DayDatasets>> {
    let members: Vec<&PatientRecord> = records
        .iter()
        .filter(|r| !r.is_excluded() && slice.admits(assign_phase(r, boundary)))
        .collect();
    let mut sides: HashMap<Side, Vec<&PatientRecord>> = HashMap::new();
    for r in &members {
        let side = split.side(&r.patient_id).ok_or_else(|| {
            Error::InvalidInput(format!("patient {} is missing from the split", r.patient_id))
        })?;
        sides.entry(side).or_default().push(r);
    }

    day_configs
        .iter()
        .map(|&day| {
            let id = DatasetId {
                phase: slice,
                day,
                form,
            };
            let side_set = |side| -> Result<Dataset> {
                let recs = sides.get(&side).map(Vec::as_slice).unwrap_or(&[]);
                let ds = snapshot_dataset(recs, registry, id, trend_threshold)?;
                if ds.is_empty() {
                    return Err(Error::EmptyDataset(format!("{} ({})", id.stem(), side.as_str())));
                }
                Ok(ds)
            };
            Ok(DayDatasets {
                day,
                train: side_set(Side::Train)?,
                test: side_set(Side::Test)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{LabEvent, RawOutcome, Sex};
    use crate::registry::LabTest;

    fn patient(id: &str, stay: u32, outcome: RawOutcome, month: u32) -> PatientRecord {
        PatientRecord {
            patient_id: id.into(),
            age: 60,
            sex: Sex::Male,
            admission_date: NaiveDate::from_ymd_opt(2020, month, 5).unwrap(),
            stay_length: stay,
            events: vec![LabEvent {
                test: LabTest::Pcr,
                day: 0,
                value: 30.0,
            }],
            outcome,
        }
    }

    fn cohort(alive: usize, dead: usize) -> Vec<PatientRecord> {
        (0..alive)
            .map(|i| patient(&format!("a{i:03}"), 3 + (i % 12) as u32, RawOutcome::Released, 3))
            .chain((0..dead).map(|i| patient(&format!("d{i:03}"), 3 + (i % 12) as u32, RawOutcome::Died, 3)))
            .collect()
    }

    #[test]
    fn per_class_counts() {
        let c = cohort(100, 20);
        let refs: Vec<_> = c.iter().collect();
        let s = stratified_split(&refs, 0.2, 9).unwrap();
        let test: Vec<_> = s.ids(Side::Test).collect();
        assert_eq!(test.iter().filter(|id| id.starts_with('a')).count(), 20);
        assert_eq!(test.iter().filter(|id| id.starts_with('d')).count(), 4);
        assert_eq!(s.assignment.len(), 120);
    }

    #[test]
    fn deterministic_and_order_independent() {
        let c = cohort(30, 10);
        let refs: Vec<_> = c.iter().collect();
        let mut rev = refs.clone();
        rev.reverse();
        let a = stratified_split(&refs, 0.2, 5).unwrap();
        assert_eq!(a, stratified_split(&refs, 0.2, 5).unwrap());
        assert_eq!(a, stratified_split(&rev, 0.2, 5).unwrap());
        assert_ne!(a, stratified_split(&refs, 0.2, 6).unwrap());
    }

    #[test]
    fn zero_fraction_and_small_class() {
        let c = cohort(10, 3);
        let refs: Vec<_> = c.iter().collect();
        let s = stratified_split(&refs, 0.0, 1).unwrap();
        assert_eq!(s.ids(Side::Test).count(), 0);
        let c = cohort(10, 1);
        let refs: Vec<_> = c.iter().collect();
        assert!(matches!(
            stratified_split(&refs, 0.2, 1),
            Err(Error::TooFewSamples { class: "dead", .. })
        ));
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(test_count(10, 0.25), 3);
        assert_eq!(test_count(10, 0.24), 2);
        assert_eq!(test_count(7, 0.5), 4);
    }

    #[test]
    fn day_membership_follows_stay_length() {
        let mut c = cohort(40, 10);
        c.push(patient("short", 5, RawOutcome::Released, 3));
        c.push(patient("gone", 5, RawOutcome::TransferredHospital, 3));
        let boundary = NaiveDate::from_ymd_opt(2020, 3, 21).unwrap();
        let split = stratified_split_by_phase(&c, boundary, 0.2, 3).unwrap();
        assert!(split.side("gone").is_none());
        let sets = build_day_datasets(
            &c,
            boundary,
            &Registry::default(),
            &split,
            Slice::Hcp,
            FeatureForm::Numerical,
            &DayConfig::STANDARD,
            0.15,
        )
        .unwrap();
        let has = |d: &DayDatasets| {
            d.train.patient_ids.iter().chain(&d.test.patient_ids).any(|p| p == "short")
        };
        let present: Vec<bool> = sets.iter().map(has).collect();
        assert_eq!(present, vec![true, true, false, false, false, true]);
        for d in &sets {
            let expected = c
                .iter()
                .filter(|r| !r.is_excluded() && d.day.includes(r))
                .count();
            assert_eq!(d.train.len() + d.test.len(), expected);
        }
    }

    #[test]
    fn csv_round_trip_keeps_missing_cells() {
        let c = cohort(6, 3);
        let refs: Vec<_> = c.iter().collect();
        let id = DatasetId {
            phase: Slice::Hcp,
            day: DayConfig::Day(4),
            form: FeatureForm::Numerical,
        };
        let ds = snapshot_dataset(&refs, &Registry::default(), id, 0.15).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hcp-day4-num-train.csv");
        ds.save_csv(&path).unwrap();
        let back = Dataset::load_csv(&path, None).unwrap();
        assert_eq!(back, ds);
        assert!(back.rows[0][2].is_none());
    }

    #[test]
    fn dataset_id_stem() {
        let id = DatasetId::from_stem("mcp-end-cat-test").unwrap();
        assert_eq!(id.day, DayConfig::End);
        assert_eq!(id.phase, Slice::Mcp);
        assert_eq!(id.stem(), "mcp-end-cat");
    }
}
