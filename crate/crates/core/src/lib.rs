//! Prognosis prediction from longitudinal lab findings: per-day patient
//! snapshots, randomized tree ensembles, reject-option thresholds and
//! held-out evaluation.

pub mod cohort;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod metrics;
pub mod pipeline;
pub mod provenance;
pub mod registry;
pub mod rng;
pub mod selection;
pub mod snapshot;
pub mod synth;
pub mod tree;
pub mod uncertainty;

pub use error::{Error, Result};
