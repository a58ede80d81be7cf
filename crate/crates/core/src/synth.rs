//! Seeded synthetic cohorts: admission phase, outcome, stay and irregularly
//! sampled lab findings, with separate mortality and value-to-risk relations
//! per phase.
//!
//! Families: stays are log-normal; a finding is log-normal around the test
//! median, shifted in log space by a persistent per-patient-per-test offset,
//! a phase offset, and for deceased patients a severity shift that grows over
//! the stay. Survivors drift back toward the median. Gaps between findings
//! of one test are exponential with a per-test mean.

use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{LabEvent, Phase, PatientRecord, RawOutcome, Sex};
use crate::error::{Error, Result};
use crate::registry::LabTest;
use crate::rng::{derive_seed, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestProfile {
    pub test: LabTest,
    /// Median finding of a survivor at admission.
    pub median: f64,
    /// Female median when it differs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_female: Option<f64>,
    /// Log-scale spread.
    pub sigma: f64,
    /// Mean gap in days between consecutive findings.
    pub mean_gap: f64,
    /// Probability that the first finding is taken on the admission day.
    pub admission_prob: f64,
    /// Log-space shift for deceased patients, `[HCP, MCP]`. Positive means
    /// higher values signal risk.
    pub severity: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StayDistribution {
    pub median: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub n_patients: usize,
    /// Fraction of patients admitted during the high-contagion phase.
    pub phase_mix: f64,
    /// HCP mortality = `base_mortality * drift_factor`.
    pub drift_factor: f64,
    /// MCP mortality.
    pub base_mortality: f64,
    pub first_admission: NaiveDate,
    /// First MCP admission date.
    pub boundary: NaiveDate,
    pub last_admission: NaiveDate,
    /// `[HCP, MCP]`.
    pub stay: [StayDistribution; 2],
    /// Stay multiplier for deceased patients.
    pub death_stay_factor: f64,
    pub max_stay: u32,
    /// Share of the severity shift already present on the admission day;
    /// the rest builds up linearly until the last day of the stay.
    pub severity_onset: f64,
    /// Log-space gap between HCP and MCP findings, split evenly: HCP values
    /// move up by half of it and MCP values down by half.
    pub phase_value_gap: f64,
    pub transfer_hospital_rate: f64,
    pub transfer_rehab_rate: f64,
    pub female_rate: f64,
    /// Survivor and deceased age as `(mean, sd)`.
    pub age_alive: (f64, f64),
    pub age_dead: (f64, f64),
    /// Every patient gets at least this many findings.
    pub min_events: usize,
    pub tests: Vec<TestProfile>,
    pub seed: u64,
}

fn profile(test: LabTest, median: f64, sigma: f64, mean_gap: f64, admission_prob: f64, severity: [f64; 2]) -> TestProfile {
    TestProfile {
        test,
        median,
        median_female: None,
        sigma,
        mean_gap,
        admission_prob,
        severity,
    }
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        let date = |m, d| NaiveDate::from_ymd_opt(2020, m, d).expect("valid literal date");
        let mut ferritin = profile(LabTest::Ferritin, 1030.0, 0.7, 7.0, 0.4, [0.5, 0.2]);
        ferritin.median_female = Some(497.0);
        GeneratorSpec {
            n_patients: 2000,
            phase_mix: 0.5,
            drift_factor: 2.0,
            base_mortality: 0.11,
            first_admission: date(2, 20),
            boundary: date(3, 21),
            last_admission: date(5, 31),
            stay: [
                StayDistribution { median: 8.0, sigma: 0.6 },
                StayDistribution { median: 14.0, sigma: 0.6 },
            ],
            death_stay_factor: 0.8,
            max_stay: 60,
            severity_onset: 0.7,
            phase_value_gap: 0.5,
            transfer_hospital_rate: 0.02,
            transfer_rehab_rate: 0.05,
            female_rate: 0.4,
            age_alive: (62.0, 14.0),
            age_dead: (74.0, 10.0),
            min_events: 3,
            tests: vec![
                profile(LabTest::Pcr, 34.3, 1.0, 1.5, 0.9, [0.9, 0.5]),
                profile(LabTest::Ldh, 280.0, 0.4, 2.0, 0.85, [0.3, 0.5]),
                ferritin,
                profile(LabTest::TroponinT, 19.0, 0.8, 5.0, 0.6, [0.4, 0.9]),
                profile(LabTest::Wbc, 7.1, 0.4, 1.5, 0.9, [0.3, 0.4]),
                profile(LabTest::DDimer, 553.0, 0.9, 3.0, 0.7, [0.8, 0.3]),
                profile(LabTest::Fibrinogen, 442.0, 0.3, 4.0, 0.7, [0.3, -0.3]),
                profile(LabTest::Lymphocyte, 1.0, 0.5, 1.5, 0.9, [-0.5, -0.5]),
                profile(LabTest::NeutrophilLymphocyteRatio, 4.9, 0.6, 1.5, 0.9, [0.7, 0.5]),
                profile(LabTest::XRayScore, 8.0, 0.5, 4.0, 0.8, [0.4, 0.6]),
            ],
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: GeneratorSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn hcp_mortality(&self) -> f64 {
        self.base_mortality * self.drift_factor
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("generator: {m}")));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_patients == 0 {
            return bad("n_patients must be at least 1".into());
        }
        if !unit(self.phase_mix) || !unit(self.base_mortality) {
            return bad("phase_mix and base_mortality must lie in [0, 1]".into());
        }
        if !(self.drift_factor >= 1.0) || self.hcp_mortality() > 1.0 {
            return bad(format!(
                "drift_factor {} must be >= 1 with base_mortality * drift_factor <= 1",
                self.drift_factor
            ));
        }
        if !unit(self.severity_onset) {
            return bad("severity_onset must lie in [0, 1]".into());
        }
        if !unit(self.transfer_hospital_rate) || !unit(self.transfer_rehab_rate) || !unit(self.female_rate) {
            return bad("transfer and female rates must lie in [0, 1]".into());
        }
        if !(self.first_admission < self.boundary && self.boundary <= self.last_admission) {
            return bad("need first_admission < boundary <= last_admission".into());
        }
        if self.stay.iter().any(|s| !(s.median >= 1.0 && s.sigma >= 0.0)) || self.max_stay == 0 {
            return bad("stay medians must be >= 1 day, sigmas >= 0, max_stay >= 1".into());
        }
        if !(self.death_stay_factor > 0.0) {
            return bad("death_stay_factor must be positive".into());
        }
        if self.age_alive.1 < 0.0 || self.age_dead.1 < 0.0 {
            return bad("age standard deviations must be non-negative".into());
        }
        if self.tests.is_empty() || self.min_events > self.tests.len() {
            return bad(format!("min_events {} exceeds the {} profiled tests", self.min_events, self.tests.len()));
        }
        for t in &self.tests {
            let medians_ok = t.median > 0.0 && t.median_female.is_none_or(|m| m > 0.0);
            if !medians_ok || !(t.sigma >= 0.0) || !(t.mean_gap >= 1.0) || !unit(t.admission_prob) {
                return bad(format!("profile {}: medians > 0, sigma >= 0, mean_gap >= 1", t.test));
            }
        }
        let mut ids: Vec<LabTest> = self.tests.iter().map(|t| t.test).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.tests.len() {
            return bad("each test may be profiled once".into());
        }
        Ok(())
    }
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("validated non-negative standard deviation")
}

/// Patient `index` of the cohort; depends only on `(spec, index)`.
pub fn generate_patient(spec: &GeneratorSpec, index: usize) -> PatientRecord {
    let mut rng = stream(spec.seed, index as u64);
    let phase = if rng.random::<f64>() < spec.phase_mix { Phase::Hcp } else { Phase::Mcp };
    let p = phase as usize;

    let (from, days) = match phase {
        Phase::Hcp => (spec.first_admission, (spec.boundary - spec.first_admission).num_days()),
        Phase::Mcp => (spec.boundary, (spec.last_admission - spec.boundary).num_days() + 1),
    };
    let admission_date = from + Days::new(rng.random_range(0..days as u64));

    let mortality = match phase {
        Phase::Hcp => spec.hcp_mortality(),
        Phase::Mcp => spec.base_mortality,
    };
    let outcome = if rng.random::<f64>() < spec.transfer_hospital_rate {
        RawOutcome::TransferredHospital
    } else if rng.random::<f64>() < mortality {
        RawOutcome::Died
    } else if rng.random::<f64>() < spec.transfer_rehab_rate {
        RawOutcome::TransferredRehab
    } else {
        RawOutcome::Released
    };
    let dead = outcome == RawOutcome::Died;

    let sex = if rng.random::<f64>() < spec.female_rate { Sex::Female } else { Sex::Male };
    let (age_mean, age_sd) = if dead { spec.age_dead } else { spec.age_alive };
    let age = normal(age_mean, age_sd).sample(&mut rng).round().clamp(18.0, 100.0) as u32;

    let stay_dist = spec.stay[p];
    let mut log_stay = stay_dist.median.ln() + stay_dist.sigma * normal(0.0, 1.0).sample(&mut rng);
    if dead {
        log_stay += spec.death_stay_factor.ln();
    }
    let stay_length = (log_stay.exp().round() as u32).clamp(1, spec.max_stay);

    let progress = |day: u32| f64::from(day) / f64::from(stay_length.saturating_sub(1).max(1));
    let mut events = Vec::new();
    let mut first_values = Vec::with_capacity(spec.tests.len());
    for t in &spec.tests {
        let median = match (sex, t.median_female) {
            (Sex::Female, Some(m)) => m,
            _ => t.median,
        };
        let offset = 0.7 * t.sigma * normal(0.0, 1.0).sample(&mut rng);
        let phase_shift = match phase {
            Phase::Hcp => 0.5 * spec.phase_value_gap,
            Phase::Mcp => -0.5 * spec.phase_value_gap,
        };
        let effect = t.severity[p];
        let onset = spec.severity_onset;
        let noise = normal(0.0, 0.5 * t.sigma);
        let value_at = |day: u32, rng: &mut crate::rng::StreamRng| {
            let x = progress(day);
            let drift = if dead { effect * (onset + (1.0 - onset) * x) } else { -0.3 * effect * x };
            let v = (median.ln() + offset + phase_shift + drift + noise.sample(rng)).exp();
            quantize(t.test, v)
        };
        first_values.push(value_at(0, &mut rng));

        let gap = Exp::new(1.0 / t.mean_gap).expect("validated mean gap");
        let mut day = if rng.random::<f64>() < t.admission_prob {
            0
        } else {
            1 + gap.sample(&mut rng).round() as u32
        };
        while day < stay_length {
            let value = value_at(day, &mut rng);
            events.push(LabEvent { test: t.test, day, value });
            day += (gap.sample(&mut rng).round() as u32).max(1);
        }
    }

    // Floor: fill admission-day findings in profile order.
    for (t, &value) in spec.tests.iter().zip(&first_values) {
        if events.len() >= spec.min_events {
            break;
        }
        if !events.iter().any(|e| e.test == t.test && e.day == 0) {
            events.push(LabEvent { test: t.test, day: 0, value });
        }
    }

    let mut record = PatientRecord {
        patient_id: format!("P{index:05}"),
        age,
        sex,
        admission_date,
        stay_length,
        events,
        outcome,
    };
    record.sort_events();
    record
}

fn quantize(test: LabTest, v: f64) -> f64 {
    match test {
        LabTest::XRayScore => v.round().clamp(0.0, 18.0),
        _ => (v * 100.0).round() / 100.0,
    }
}

/// The whole cohort, generated in parallel and returned in index order.
pub fn generate(spec: &GeneratorSpec) -> Result<Vec<PatientRecord>> {
    spec.validate()?;
    Ok((0..spec.n_patients)
        .into_par_iter()
        .map(|i| generate_patient(spec, i))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sparsity {
    pub default_rate: f64,
    #[serde(default)]
    pub per_test: Vec<(LabTest, f64)>,
    /// Patients keep at least `min(min_events, original count)` findings.
    pub min_events: usize,
}

impl Sparsity {
    pub fn uniform(rate: f64, min_events: usize) -> Self {
        Sparsity {
            default_rate: rate,
            per_test: Vec::new(),
            min_events,
        }
    }

    pub fn rate(&self, test: LabTest) -> f64 {
        self.per_test
            .iter()
            .find(|(t, _)| *t == test)
            .map_or(self.default_rate, |(_, r)| *r)
    }
}

/// Drops each finding independently with its test's rate; when a patient
/// falls below the floor the earliest dropped findings are restored.
pub fn inject_sparsity(records: &[PatientRecord], sparsity: &Sparsity, seed: u64) -> Result<Vec<PatientRecord>> {
    let rates: Vec<f64> = std::iter::once(sparsity.default_rate)
        .chain(sparsity.per_test.iter().map(|(_, r)| *r))
        .collect();
    if rates.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(Error::InvalidInput("drop rates must lie in [0, 1)".into()));
    }
    let salt = derive_seed(seed, 0x5ba5);
    Ok(records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = stream(salt, i as u64);
            let keep: Vec<bool> = r
                .events
                .iter()
                .map(|e| rng.random::<f64>() >= sparsity.rate(e.test))
                .collect();
            let floor = sparsity.min_events.min(r.events.len());
            let mut missing = floor.saturating_sub(keep.iter().filter(|k| **k).count());
            let mut out = r.clone();
            out.events = r
                .events
                .iter()
                .zip(keep)
                .filter_map(|(e, k)| {
                    if k {
                        Some(*e)
                    } else if missing > 0 {
                        missing -= 1;
                        Some(*e)
                    } else {
                        None
                    }
                })
                .collect();
            out
        })
        .collect())
}
