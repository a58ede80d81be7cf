//! Patient records, event-file ingestion, outcome labels and contagion phases.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{LabTest, Registry};

pub const EVENT_HEADER: [&str; 9] = [
    "patient_id",
    "age",
    "sex",
    "admission_date",
    "outcome",
    "release_day",
    "test",
    "day",
    "value",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

impl Sex {
    /// Feature encoding: M = 0, F = 1.
    pub fn code(self) -> f64 {
        match self {
            Sex::Male => 0.0,
            Sex::Female => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "M",
            Sex::Female => "F",
        }
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "M" | "m" => Ok(Sex::Male),
            "F" | "f" => Ok(Sex::Female),
            other => Err(Error::InvalidInput(format!("sex must be M or F, got `{other}`"))),
        }
    }
}

/// Binary class; `Dead` is the positive class everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Alive,
    Dead,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Alive => 0,
            Label::Dead => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Alive => "alive",
            Label::Dead => "dead",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "alive" => Ok(Label::Alive),
            "dead" => Ok(Label::Dead),
            other => Err(Error::InvalidInput(format!("label must be alive or dead, got `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawOutcome {
    Died,
    Released,
    TransferredHospital,
    TransferredRehab,
}

impl RawOutcome {
    pub const ALL: [RawOutcome; 4] = [
        RawOutcome::Died,
        RawOutcome::Released,
        RawOutcome::TransferredHospital,
        RawOutcome::TransferredRehab,
    ];

    /// `None` marks patients excluded from training and testing: their
    /// outcome after a transfer to another hospital is unknown.
    pub fn label(self) -> Option<Label> {
        match self {
            RawOutcome::Died => Some(Label::Dead),
            RawOutcome::Released | RawOutcome::TransferredRehab => Some(Label::Alive),
            RawOutcome::TransferredHospital => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RawOutcome::Died => "died",
            RawOutcome::Released => "released",
            RawOutcome::TransferredHospital => "transferred_hospital",
            RawOutcome::TransferredRehab => "transferred_rehab",
        }
    }
}

impl FromStr for RawOutcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RawOutcome::ALL
            .into_iter()
            .find(|o| o.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidInput(format!("unknown outcome `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabEvent {
    pub test: LabTest,
    /// Days since admission; admission day is 0.
    pub day: u32,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub age: u32,
    pub sex: Sex,
    pub admission_date: NaiveDate,
    /// Day offset of release or death, at least 1.
    pub stay_length: u32,
    /// Sorted by `(day, test)`, at most one event per `(test, day)`.
    pub events: Vec<LabEvent>,
    pub outcome: RawOutcome,
}

impl PatientRecord {
    pub fn label(&self) -> Option<Label> {
        self.outcome.label()
    }

    pub fn is_excluded(&self) -> bool {
        self.label().is_none()
    }

    /// Findings of one test in chronological order.
    pub fn findings(&self, test: LabTest) -> impl Iterator<Item = &LabEvent> + '_ {
        self.events.iter().filter(move |e| e.test == test)
    }

    pub fn sort_events(&mut self) {
        self.events.sort_by(|a, b| (a.day, a.test).cmp(&(b.day, b.test)));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Hcp,
    Mcp,
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::Hcp, Phase::Mcp];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Hcp => "hcp",
            Phase::Mcp => "mcp",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hcp" => Ok(Phase::Hcp),
            "mcp" => Ok(Phase::Mcp),
            other => Err(Error::InvalidInput(format!("phase must be hcp or mcp, got `{other}`"))),
        }
    }
}

/// Admissions strictly before `boundary` belong to the high contagion phase;
/// the boundary day itself opens the moderate phase.
pub fn assign_phase(record: &PatientRecord, boundary: NaiveDate) -> Phase {
    if record.admission_date < boundary {
        Phase::Hcp
    } else {
        Phase::Mcp
    }
}

/// Non-excluded patients of `phase`.
pub fn phase_members(
    records: &[PatientRecord],
    boundary: NaiveDate,
    phase: Phase,
) -> Vec<&PatientRecord> {
    records
        .iter()
        .filter(|r| !r.is_excluded() && assign_phase(r, boundary) == phase)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Rejected,
    Duplicate,
    Conflict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    pub line: u64,
    pub kind: DiagnosticKind,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct IngestReport {
    pub records: Vec<PatientRecord>,
    pub diagnostics: Vec<RowDiagnostic>,
}

impl IngestReport {
    pub fn rejected_rows(&self) -> usize {
        self.diagnostics
            .iter()
            .filter(|d| d.kind == DiagnosticKind::Rejected)
            .count()
    }
}

pub fn ingest_cohort(path: &Path, registry: &Registry) -> Result<IngestReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, registry, path)
}

struct PatientAcc {
    record: PatientRecord,
    events: BTreeMap<(LabTest, u32), (f64, u64)>,
}

pub fn ingest_reader<R: Read>(reader: R, registry: &Registry, source: &Path) -> Result<IngestReport> {
    let fatal = |line: u64, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };

    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| fatal(1, e.to_string()))?.clone();
    if header.iter().ne(EVENT_HEADER.iter().copied()) {
        return Err(fatal(1, format!("expected header `{}`", EVENT_HEADER.join(","))));
    }

    let mut order: Vec<String> = Vec::new();
    let mut patients: HashMap<String, PatientAcc> = HashMap::new();
    let mut diagnostics = Vec::new();

    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            fatal(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("");
        let parse_err = |name: &str, err: &dyn fmt::Display| fatal(line, format!("field `{name}`: {err}"));

        let patient_id = field(0).to_string();
        if patient_id.is_empty() {
            return Err(fatal(line, "empty patient_id".into()));
        }
        let age: u32 = field(1).parse().map_err(|e| parse_err("age", &e))?;
        let sex: Sex = field(2).parse().map_err(|e| parse_err("sex", &e))?;
        let admission_date =
            NaiveDate::parse_from_str(field(3), "%Y-%m-%d").map_err(|e| parse_err("admission_date", &e))?;
        let outcome: RawOutcome = field(4).parse().map_err(|e| parse_err("outcome", &e))?;
        let release_day: i64 = field(5).parse().map_err(|e| parse_err("release_day", &e))?;

        let event = if field(6).is_empty() && field(7).is_empty() && field(8).is_empty() {
            None
        } else {
            let day: i64 = field(7).parse().map_err(|e| parse_err("day", &e))?;
            let value: f64 = field(8).parse().map_err(|e| parse_err("value", &e))?;
            Some((field(6), day, value))
        };

        let mut reject = |message: String| {
            diagnostics.push(RowDiagnostic {
                line,
                kind: DiagnosticKind::Rejected,
                message: format!("patient {patient_id}: {message}"),
            })
        };

        if release_day < 1 || release_day > i64::from(u32::MAX) {
            reject(format!("release_day {release_day} must be at least 1"));
            continue;
        }
        let stay_length = release_day as u32;

        let event = match event {
            None => None,
            Some((test_id, day, value)) => {
                let test = match test_id.parse::<LabTest>() {
                    Ok(t) if registry.get(t).is_some() => t,
                    _ => {
                        reject(format!("unknown test id `{test_id}`"));
                        continue;
                    }
                };
                if day < 0 || day > i64::from(stay_length) {
                    reject(format!("event day {day} outside [0, {stay_length}]"));
                    continue;
                }
                if !value.is_finite() || value < 0.0 {
                    reject(format!("{test} value {value} must be finite and non-negative"));
                    continue;
                }
                if let Some(max) = registry.get(test).and_then(|t| t.valid_max) {
                    if value > max {
                        reject(format!("{test} value {value} outside [0, {max}]"));
                        continue;
                    }
                }
                Some((test, day as u32, value))
            }
        };

        let acc = match patients.entry(patient_id.clone()) {
            std::collections::hash_map::Entry::Occupied(o) => {
                let acc = o.into_mut();
                let r = &acc.record;
                if r.age != age
                    || r.sex != sex
                    || r.admission_date != admission_date
                    || r.outcome != outcome
                    || r.stay_length != stay_length
                {
                    reject("demographics or outcome disagree with earlier rows".into());
                    continue;
                }
                acc
            }
            std::collections::hash_map::Entry::Vacant(v) => {
                order.push(patient_id.clone());
                v.insert(PatientAcc {
                    record: PatientRecord {
                        patient_id: patient_id.clone(),
                        age,
                        sex,
                        admission_date,
                        stay_length,
                        events: Vec::new(),
                        outcome,
                    },
                    events: BTreeMap::new(),
                })
            }
        };

        if let Some((test, day, value)) = event {
            match acc.events.entry((test, day)) {
                Entry::Vacant(v) => {
                    v.insert((value, line));
                }
                Entry::Occupied(mut o) => {
                    let (prev, prev_line) = *o.get();
                    let (kind, message) = if prev == value {
                        (
                            DiagnosticKind::Duplicate,
                            format!("patient {patient_id}: duplicate of line {prev_line} dropped"),
                        )
                    } else {
                        o.insert((value, line));
                        (
                            DiagnosticKind::Conflict,
                            format!(
                                "patient {patient_id}: {test} on day {day} was {prev} at line {prev_line}, keeping {value}"
                            ),
                        )
                    };
                    log::warn!("{}:{line}: {message}", source.display());
                    diagnostics.push(RowDiagnostic { line, kind, message });
                }
            }
        }
    }

    for d in diagnostics.iter().filter(|d| d.kind == DiagnosticKind::Rejected) {
        log::warn!("{}:{}: row rejected: {}", source.display(), d.line, d.message);
    }

    let records = order
        .into_iter()
        .map(|id| {
            let mut acc = patients.remove(&id).expect("every ordered id has an accumulator");
            acc.record.events = acc
                .events
                .into_iter()
                .map(|((test, day), (value, _))| LabEvent { test, day, value })
                .collect();
            acc.record.sort_events();
            acc.record
        })
        .collect();

    Ok(IngestReport {
        records,
        diagnostics,
    })
}

/// Writes records in the event-file format. Patients without events get a
/// single row with empty `test,day,value` fields.
pub fn write_events<W: Write>(records: &[PatientRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EVENT_HEADER)?;
    for r in records {
        let head = [
            r.patient_id.clone(),
            r.age.to_string(),
            r.sex.as_str().to_string(),
            r.admission_date.format("%Y-%m-%d").to_string(),
            r.outcome.as_str().to_string(),
            r.stay_length.to_string(),
        ];
        if r.events.is_empty() {
            w.write_record(head.iter().map(String::as_str).chain(["", "", ""]))?;
        }
        for e in &r.events {
            let tail = [e.test.id().to_string(), e.day.to_string(), e.value.to_string()];
            w.write_record(head.iter().chain(tail.iter()))?;
        }
    }
    w.flush().map_err(|e| Error::io("<events>", e))?;
    Ok(())
}

pub fn write_events_file(records: &[PatientRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_events(records, std::io::BufWriter::new(file))
}

/// Ingested cohort together with the registry and phase boundary used by
/// every downstream stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortFile {
    pub format_version: u32,
    pub boundary: NaiveDate,
    pub registry: Registry,
    pub patients: Vec<PatientRecord>,
}

impl CohortFile {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn new(boundary: NaiveDate, registry: Registry, patients: Vec<PatientRecord>) -> Self {
        Self {
            format_version: Self::FORMAT_VERSION,
            boundary,
            registry,
            patients,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CohortFile = serde_json::from_str(&text)?;
        if file.format_version != Self::FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported cohort format_version {}",
                file.format_version
            )));
        }
        file.registry.validate()?;
        Ok(file)
    }
}

pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub phase: Phase,
    pub patients: usize,
    pub deaths: usize,
    pub mortality: Option<f64>,
    pub median_stay: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub patients: usize,
    pub excluded: usize,
    pub median_stay: f64,
    pub phases: Vec<PhaseStats>,
    pub test_medians: BTreeMap<LabTest, f64>,
}

impl CohortStats {
    pub fn phase(&self, phase: Phase) -> &PhaseStats {
        self.phases
            .iter()
            .find(|p| p.phase == phase)
            .expect("stats cover both phases")
    }
}

/// Mortality and stay statistics per phase (excluded patients left out),
/// plus the median of every test over all recorded findings.
pub fn cohort_stats(records: &[PatientRecord], boundary: NaiveDate) -> Result<CohortStats> {
    if records.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let mut stays: Vec<f64> = records.iter().map(|r| f64::from(r.stay_length)).collect();
    let median_stay = median(&mut stays).expect("non-empty");

    let phases = Phase::ALL
        .into_iter()
        .map(|phase| {
            let members = phase_members(records, boundary, phase);
            let deaths = members.iter().filter(|r| r.label() == Some(Label::Dead)).count();
            let mut stays: Vec<f64> = members.iter().map(|r| f64::from(r.stay_length)).collect();
            PhaseStats {
                phase,
                patients: members.len(),
                deaths,
                mortality: (!members.is_empty()).then(|| deaths as f64 / members.len() as f64),
                median_stay: median(&mut stays),
            }
        })
        .collect();

    let mut by_test: BTreeMap<LabTest, Vec<f64>> = BTreeMap::new();
    for e in records.iter().flat_map(|r| &r.events) {
        by_test.entry(e.test).or_default().push(e.value);
    }
    let test_medians = by_test
        .into_iter()
        .filter_map(|(t, mut v)| median(&mut v).map(|m| (t, m)))
        .collect();

    Ok(CohortStats {
        patients: records.len(),
        excluded: records.iter().filter(|r| r.is_excluded()).count(),
        median_stay,
        phases,
        test_medians,
    })
}
