//! Health index estimation from run-to-failure sensor data.
//!
//! The pipeline has two stages. First, a small feed-forward network is
//! trained with a semi-supervised anomaly objective (optionally augmented
//! with a diversity penalty on the embedding Gram matrix) to map sensor
//! features into condition indicators. Second, an alternating projection
//! scheme fuses those indicators into a single health index that is
//! non-positive over the known healthy prefix, at least one past the fault
//! window, and monotonically non-decreasing in between.
//!
//! The crate also ships feature extraction for raw vibration/acoustic
//! signals (log-mel energies), evaluation metrics for health indices,
//! and a synthetic run-to-failure generator used for self-checks.

pub mod config;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod features;
pub mod fusion;
pub mod linalg;
pub mod metrics;
pub mod synth;

pub mod cli;

pub use error::{Error, Result};

/// How a health index was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// Squared embedding norm, no fusion.
    AnomalyScore,
    /// Alternating-projection fit over full trajectories.
    Offline,
    /// Segments concatenated from prefix solves every `tau` steps.
    Realtime { tau: usize },
}

/// A health index time series.
///
/// `values` is the reported HI (the ideal-space projection for fused
/// indices, the anomaly score otherwise); `raw` keeps the unprojected
/// regression output `h = Y w`, which equals `values` for anomaly scores.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HealthIndex {
    pub values: Vec<f64>,
    pub raw: Vec<f64>,
    pub provenance: Provenance,
}

impl HealthIndex {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
