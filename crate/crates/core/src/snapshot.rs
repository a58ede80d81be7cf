//! Patient snapshots: the feature vector describing a patient on a given
//! hospitalization day.
//!
//! For every registry test a snapshot carries the selected finding (value or
//! severity bin), its ageing in days and, depending on the day config, the
//! start trend (first → latest finding) and/or last trend (penultimate →
//! latest). Age and sex close the vector.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cohort::{Label, PatientRecord};
use crate::error::{Error, Result};
use crate::registry::{LabTest, Registry};

pub const DEFAULT_TREND_THRESHOLD: f64 = 0.15;

/// Which hospitalization day a dataset describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DayConfig {
    Day(u32),
    /// The last day before release or death.
    End,
}

impl DayConfig {
    pub const STANDARD: [DayConfig; 6] = [
        DayConfig::Day(2),
        DayConfig::Day(4),
        DayConfig::Day(6),
        DayConfig::Day(8),
        DayConfig::Day(10),
        DayConfig::End,
    ];

    pub fn schema(self) -> FeatureSchema {
        match self {
            DayConfig::Day(d) if d <= 2 => FeatureSchema {
                first_window: true,
                ageing: false,
                start_trend: false,
                last_trend: false,
            },
            DayConfig::Day(d) if d <= 6 => FeatureSchema {
                first_window: false,
                ageing: true,
                start_trend: true,
                last_trend: false,
            },
            DayConfig::Day(_) => FeatureSchema {
                first_window: false,
                ageing: true,
                start_trend: false,
                last_trend: true,
            },
            DayConfig::End => FeatureSchema {
                first_window: false,
                ageing: true,
                start_trend: true,
                last_trend: true,
            },
        }
    }

    /// `None` when the patient left hospital before the snapshot day.
    pub fn snapshot_day(self, record: &PatientRecord) -> Option<u32> {
        match self {
            DayConfig::Day(d) => (record.stay_length > d).then_some(d),
            DayConfig::End => Some(record.stay_length - 1),
        }
    }

    pub fn includes(self, record: &PatientRecord) -> bool {
        self.snapshot_day(record).is_some()
    }

    /// File-name friendly form: `day4`, `end`.
    pub fn slug(self) -> String {
        match self {
            DayConfig::Day(d) => format!("day{d}"),
            DayConfig::End => "end".into(),
        }
    }
}

impl fmt::Display for DayConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DayConfig::Day(d) => write!(f, "{d}"),
            DayConfig::End => f.write_str("end"),
        }
    }
}

impl FromStr for DayConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "end" {
            return Ok(DayConfig::End);
        }
        s.strip_prefix("day")
            .unwrap_or(&s)
            .parse::<u32>()
            .map(DayConfig::Day)
            .map_err(|_| Error::InvalidInput(format!("day config must be a day number or `end`, got `{s}`")))
    }
}

impl Serialize for DayConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DayConfig::Day(d) => s.serialize_u32(*d),
            DayConfig::End => s.serialize_str("end"),
        }
    }
}

impl<'de> Deserialize<'de> for DayConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(u32),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(n) => Ok(DayConfig::Day(n)),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Feature groups present for a day config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureSchema {
    /// Use the earliest finding in the window instead of the latest.
    pub first_window: bool,
    pub ageing: bool,
    pub start_trend: bool,
    pub last_trend: bool,
}

impl FeatureSchema {
    pub fn per_test(&self) -> usize {
        1 + usize::from(self.ageing) + usize::from(self.start_trend) + usize::from(self.last_trend)
    }

    pub fn width(&self, n_tests: usize) -> usize {
        n_tests * self.per_test() + 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureForm {
    Numerical,
    Categorical,
}

impl FeatureForm {
    pub const ALL: [FeatureForm; 2] = [FeatureForm::Numerical, FeatureForm::Categorical];

    pub fn short(self) -> &'static str {
        match self {
            FeatureForm::Numerical => "num",
            FeatureForm::Categorical => "cat",
        }
    }
}

impl fmt::Display for FeatureForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for FeatureForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "num" | "numerical" => Ok(FeatureForm::Numerical),
            "cat" | "categorical" => Ok(FeatureForm::Categorical),
            other => Err(Error::InvalidInput(format!("form must be num or cat, got `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    Increasing,
    Stable,
    Decreasing,
}

impl Trend {
    pub fn code(self) -> f64 {
        match self {
            Trend::Increasing => 1.0,
            Trend::Stable => 0.0,
            Trend::Decreasing => -1.0,
        }
    }
}

/// Direction of change from the earlier value `v1` to the later `v2`, with
/// a dead band of `threshold * v1` on either side. Both comparisons are
/// strict, so landing exactly on the band edge is `Stable`. With `v1 == 0`
/// the band collapses and only the sign of `v2` matters.
pub fn compute_trend(v1: f64, v2: f64, threshold: f64) -> Trend {
    if v1 == 0.0 {
        return if v2 > 0.0 { Trend::Increasing } else { Trend::Stable };
    }
    let band = threshold * v1;
    if v2 - v1 > band {
        Trend::Increasing
    } else if v1 - v2 > band {
        Trend::Decreasing
    } else {
        Trend::Stable
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Finding {
    pub value: f64,
    pub ageing: u32,
}

/// Latest finding of `test` on or before `day`, or the earliest one when
/// `first_window` is set.
pub fn most_recent_finding(
    record: &PatientRecord,
    test: LabTest,
    day: u32,
    first_window: bool,
) -> Option<Finding> {
    let mut in_window = record.findings(test).filter(|e| e.day <= day);
    let event = if first_window {
        in_window.next()
    } else {
        in_window.last()
    }?;
    Some(Finding {
        value: event.value,
        ageing: day - event.day,
    })
}

/// `(start, last)` trends of `test` as of `day`; both `None` with fewer than
/// two findings.
pub fn start_and_last_trends(
    record: &PatientRecord,
    test: LabTest,
    day: u32,
    threshold: f64,
) -> (Option<Trend>, Option<Trend>) {
    let values: Vec<f64> = record
        .findings(test)
        .filter(|e| e.day <= day)
        .map(|e| e.value)
        .collect();
    match values.as_slice() {
        [first, .., last] => {
            let penultimate = values[values.len() - 2];
            (
                Some(compute_trend(*first, *last, threshold)),
                Some(compute_trend(penultimate, *last, threshold)),
            )
        }
        _ => (None, None),
    }
}

pub fn feature_names(registry: &Registry, config: DayConfig) -> Vec<String> {
    let schema = config.schema();
    let mut names = Vec::with_capacity(schema.width(registry.len()));
    for t in &registry.tests {
        let id = t.test.id();
        names.push(format!("{id}_value"));
        if schema.ageing {
            names.push(format!("{id}_ageing"));
        }
        if schema.start_trend {
            names.push(format!("{id}_start_trend"));
        }
        if schema.last_trend {
            names.push(format!("{id}_last_trend"));
        }
    }
    names.push("age".into());
    names.push("sex".into());
    names
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnapshotOptions {
    pub form: FeatureForm,
    pub trend_threshold: f64,
}

impl Default for SnapshotOptions {
    fn default() -> Self {
        Self {
            form: FeatureForm::Numerical,
            trend_threshold: DEFAULT_TREND_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub patient_id: String,
    pub snapshot_day: u32,
    pub label: Label,
    /// Laid out as [`feature_names`]; `None` is a missing value.
    pub features: Vec<Option<f64>>,
}

/// Builds the snapshot of `record` for `config`. Returns `Ok(None)` when the
/// patient was no longer hospitalized on the snapshot day.
pub fn build_snapshot(
    record: &PatientRecord,
    registry: &Registry,
    config: DayConfig,
    options: SnapshotOptions,
) -> Result<Option<Snapshot>> {
    let label = record
        .label()
        .ok_or_else(|| Error::ExcludedPatient(record.patient_id.clone()))?;
    let Some(day) = config.snapshot_day(record) else {
        return Ok(None);
    };
    let schema = config.schema();
    let mut features = Vec::with_capacity(schema.width(registry.len()));

    for spec in &registry.tests {
        let finding = most_recent_finding(record, spec.test, day, schema.first_window);
        let value = finding.map(|f| match options.form {
            FeatureForm::Numerical => f.value,
            FeatureForm::Categorical => f64::from(spec.categorize(f.value, record.sex)),
        });
        features.push(value);
        if schema.ageing {
            features.push(finding.map(|f| f64::from(f.ageing)));
        }
        if schema.start_trend || schema.last_trend {
            let (start, last) = start_and_last_trends(record, spec.test, day, options.trend_threshold);
            if schema.start_trend {
                features.push(start.map(Trend::code));
            }
            if schema.last_trend {
                features.push(last.map(Trend::code));
            }
        }
    }
    features.push(Some(f64::from(record.age)));
    features.push(Some(record.sex.code()));

    Ok(Some(Snapshot {
        patient_id: record.patient_id.clone(),
        snapshot_day: day,
        label,
        features,
    }))
}
