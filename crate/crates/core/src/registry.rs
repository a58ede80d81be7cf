//! Lab test catalogue: normal ranges, units and severity bin multipliers.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::Sex;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LabTest {
    #[serde(rename = "PCR")]
    Pcr,
    #[serde(rename = "LDH")]
    Ldh,
    Ferritin,
    TroponinT,
    #[serde(rename = "WBC")]
    Wbc,
    DDimer,
    Fibrinogen,
    Lymphocyte,
    #[serde(rename = "NLR")]
    NeutrophilLymphocyteRatio,
    XRayScore,
}

impl LabTest {
    pub const ALL: [LabTest; 10] = [
        LabTest::Pcr,
        LabTest::Ldh,
        LabTest::Ferritin,
        LabTest::TroponinT,
        LabTest::Wbc,
        LabTest::DDimer,
        LabTest::Fibrinogen,
        LabTest::Lymphocyte,
        LabTest::NeutrophilLymphocyteRatio,
        LabTest::XRayScore,
    ];

    pub fn id(self) -> &'static str {
        match self {
            LabTest::Pcr => "PCR",
            LabTest::Ldh => "LDH",
            LabTest::Ferritin => "Ferritin",
            LabTest::TroponinT => "TroponinT",
            LabTest::Wbc => "WBC",
            LabTest::DDimer => "DDimer",
            LabTest::Fibrinogen => "Fibrinogen",
            LabTest::Lymphocyte => "Lymphocyte",
            LabTest::NeutrophilLymphocyteRatio => "NLR",
            LabTest::XRayScore => "XRayScore",
        }
    }
}

impl fmt::Display for LabTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for LabTest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_', ' '], "");
        let test = match key.as_str() {
            "pcr" | "crp" => LabTest::Pcr,
            "ldh" => LabTest::Ldh,
            "ferritin" => LabTest::Ferritin,
            "troponint" => LabTest::TroponinT,
            "wbc" => LabTest::Wbc,
            "ddimer" => LabTest::DDimer,
            "fibrinogen" => LabTest::Fibrinogen,
            "lymphocyte" | "lymphocytes" => LabTest::Lymphocyte,
            "nlr" | "neutrophillymphocyteratio" => LabTest::NeutrophilLymphocyteRatio,
            "xrayscore" | "xray" | "rx" => LabTest::XRayScore,
            _ => return Err(Error::InvalidInput(format!("unknown lab test `{s}`"))),
        };
        Ok(test)
    }
}

/// A closed or half-open interval; a missing bound is unbounded on that side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalRange {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    #[serde(default = "yes")]
    pub upper_inclusive: bool,
}

fn yes() -> bool {
    true
}

impl NormalRange {
    pub fn at_most(upper: f64) -> Self {
        Self {
            lower: None,
            upper: Some(upper),
            upper_inclusive: true,
        }
    }

    pub fn below(upper: f64) -> Self {
        Self {
            lower: None,
            upper: Some(upper),
            upper_inclusive: false,
        }
    }

    pub fn between(lower: f64, upper: f64) -> Self {
        Self {
            lower: Some(lower),
            upper: Some(upper),
            upper_inclusive: true,
        }
    }

    /// True when `value` does not exceed the upper bound. Values below the
    /// lower bound count as "not above normal".
    pub fn not_above(&self, value: f64) -> bool {
        match self.upper {
            None => true,
            Some(u) if self.upper_inclusive => value <= u,
            Some(u) => value < u,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower.map_or(true, |l| value >= l) && self.not_above(value)
    }
}

pub const DEFAULT_BIN_MULTIPLIERS: [f64; 4] = [2.0, 4.0, 6.0, 10.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub test: LabTest,
    pub unit: String,
    pub normal: NormalRange,
    /// Overrides `normal` for female patients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal_female: Option<NormalRange>,
    #[serde(default = "default_multipliers")]
    pub bin_multipliers: Vec<f64>,
    /// Inclusive upper limit of physically valid values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_max: Option<f64>,
}

fn default_multipliers() -> Vec<f64> {
    DEFAULT_BIN_MULTIPLIERS.to_vec()
}

impl TestSpec {
    pub fn range_for(&self, sex: Sex) -> &NormalRange {
        match (sex, &self.normal_female) {
            (Sex::Female, Some(r)) => r,
            _ => &self.normal,
        }
    }

    /// Number of categorical bins (normal + one per multiplier + overflow).
    pub fn n_bins(&self) -> usize {
        self.bin_multipliers.len() + 2
    }

    /// Severity bin of `value`: 0 inside (or below) the normal range, then
    /// one bin per multiplier `m` covering values up to `m * upper`, and a
    /// final bin for anything beyond the largest multiple.
    pub fn categorize(&self, value: f64, sex: Sex) -> u32 {
        let range = self.range_for(sex);
        if range.not_above(value) {
            return 0;
        }
        let upper = range.upper.expect("not_above is true when upper is unbounded");
        for (i, m) in self.bin_multipliers.iter().enumerate() {
            if value <= m * upper {
                return i as u32 + 1;
            }
        }
        self.bin_multipliers.len() as u32 + 1
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("registry entry {}: {msg}", self.test)));
        for r in std::iter::once(&self.normal).chain(self.normal_female.as_ref()) {
            if let (Some(l), Some(u)) = (r.lower, r.upper) {
                if l > u {
                    return bad("normal range lower bound exceeds upper bound");
                }
            }
        }
        if self.bin_multipliers.iter().any(|m| !(m.is_finite() && *m > 1.0))
            || self.bin_multipliers.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("bin multipliers must be finite, > 1 and strictly increasing");
        }
        Ok(())
    }
}

/// Ordered set of lab tests; the order fixes the snapshot feature layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub tests: Vec<TestSpec>,
}

impl Default for Registry {
    fn default() -> Self {
        let spec = |test, unit: &str, normal| TestSpec {
            test,
            unit: unit.to_string(),
            normal,
            normal_female: None,
            bin_multipliers: default_multipliers(),
            valid_max: None,
        };
        let mut ferritin = spec(LabTest::Ferritin, "ng/mL", NormalRange::between(30.0, 400.0));
        ferritin.normal_female = Some(NormalRange::between(13.0, 150.0));
        let mut xray = spec(LabTest::XRayScore, "score", NormalRange::below(7.0));
        xray.valid_max = Some(18.0);
        Registry {
            tests: vec![
                spec(LabTest::Pcr, "mg/L", NormalRange::at_most(10.0)),
                spec(LabTest::Ldh, "U/L", NormalRange::between(80.0, 300.0)),
                ferritin,
                spec(LabTest::TroponinT, "ng/L", NormalRange::at_most(14.0)),
                spec(LabTest::Wbc, "10^9/L", NormalRange::between(4.0, 11.0)),
                spec(LabTest::DDimer, "ng/mL", NormalRange::at_most(250.0)),
                spec(LabTest::Fibrinogen, "mg/dL", NormalRange::between(180.0, 430.0)),
                spec(LabTest::Lymphocyte, "%", NormalRange::between(20.0, 45.0)),
                spec(LabTest::NeutrophilLymphocyteRatio, "ratio", NormalRange::between(0.8, 3.5)),
                xray,
            ],
        }
    }
}

impl Registry {
    pub fn new(tests: Vec<TestSpec>) -> Result<Self> {
        let registry = Registry { tests };
        registry.validate()?;
        Ok(registry)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let registry: Registry = serde_json::from_str(&text)?;
        registry.validate()?;
        Ok(registry)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tests.is_empty() {
            return Err(Error::InvalidInput("registry has no tests".into()));
        }
        for (i, t) in self.tests.iter().enumerate() {
            t.validate()?;
            if self.tests[..i].iter().any(|o| o.test == t.test) {
                return Err(Error::InvalidInput(format!("registry lists {} twice", t.test)));
            }
        }
        Ok(())
    }

    pub fn get(&self, test: LabTest) -> Option<&TestSpec> {
        self.tests.iter().find(|t| t.test == test)
    }

    pub fn len(&self) -> usize {
        self.tests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tests.is_empty()
    }

    pub fn categorize(&self, value: f64, test: LabTest, sex: Sex) -> Option<u32> {
        self.get(test).map(|t| t.categorize(value, sex))
    }
}
