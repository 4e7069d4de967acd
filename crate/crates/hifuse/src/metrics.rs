//! Health-index quality metrics.
//!
//! Shape metrics (correlation, affine-aligned RMSE) compare an estimated HI
//! against a known ground truth; the unsupervised criteria (monotonicity,
//! trendability, prognosability) need no truth; delay and RSSE measure
//! alarm behavior against a fault onset. All functions are pure.
//!
//! Index conventions: trajectory timesteps are 1-based wherever a step
//! number crosses an interface (fault onsets, alignment windows), matching
//! the labeling thresholds elsewhere in the crate.

use std::io::Write;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Uncentered cosine similarity `a.b / (|a| |b|)`.
pub fn correlation(h_hat: &[f64], h: &[f64]) -> Result<f64> {
    if h_hat.len() != h.len() {
        return Err(Error::data(format!(
            "correlation: length mismatch {} vs {}",
            h_hat.len(),
            h.len()
        )));
    }
    if h_hat.is_empty() {
        return Err(Error::data("correlation: empty input".to_string()));
    }
    let dot: f64 = h_hat.iter().zip(h).map(|(a, b)| a * b).sum();
    let na: f64 = h_hat.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = h.iter().map(|b| b * b).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::numerical("correlation: zero-norm input".to_string()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// The affine map `h -> scale * h + offset` shared by all trajectories
/// after alignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineMap {
    pub scale: f64,
    pub offset: f64,
}

impl AffineMap {
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        h.iter().map(|v| self.scale * v + self.offset).collect()
    }
}

/// Fits one affine map from estimated HIs to ground truths and applies it
/// to every estimate.
///
/// The map matches window means (steps `window.0..=window.1`, 1-based,
/// pooled across trajectories) and global maxima: `scale = (M2 - m2) /
/// (M1 - m1)`, `offset = m2 - m1 * scale`, where `m1`/`m2` are the window
/// means and `M1`/`M2` the maxima over all timesteps of all trajectories.
pub fn affine_align(
    h_hats: &[Vec<f64>],
    hs: &[Vec<f64>],
    window: (usize, usize),
) -> Result<(Vec<Vec<f64>>, AffineMap)> {
    if h_hats.is_empty() || h_hats.len() != hs.len() {
        return Err(Error::data(format!(
            "affine_align: {} estimates vs {} truths",
            h_hats.len(),
            hs.len()
        )));
    }
    let (lo, hi) = window;
    if lo < 1 || hi < lo {
        return Err(Error::config(format!(
            "affine_align: bad window {lo}..={hi} (1-based, need 1 <= lo <= hi)"
        )));
    }
    for (k, (e, t)) in h_hats.iter().zip(hs).enumerate() {
        if e.len() != t.len() {
            return Err(Error::data(format!(
                "affine_align: trajectory {k}: {} estimates vs {} truths",
                e.len(),
                t.len()
            )));
        }
        if e.len() < hi {
            return Err(Error::data(format!(
                "affine_align: trajectory {k} has {} steps, window needs {hi}",
                e.len()
            )));
        }
    }
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    let mut n = 0usize;
    for (e, t) in h_hats.iter().zip(hs) {
        for i in lo - 1..hi {
            m1 += e[i];
            m2 += t[i];
            n += 1;
        }
    }
    m1 /= n as f64;
    m2 /= n as f64;
    let max_all = |rows: &[Vec<f64>]| {
        rows.iter()
            .flat_map(|r| r.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let big_m1 = max_all(h_hats);
    let big_m2 = max_all(hs);
    if big_m1 - m1 == 0.0 {
        return Err(Error::numerical(
            "affine_align: degenerate scale (max equals window mean)".to_string(),
        ));
    }
    let map = AffineMap {
        scale: (big_m2 - m2) / (big_m1 - m1),
        offset: 0.0,
    };
    let map = AffineMap {
        offset: m2 - m1 * map.scale,
        ..map
    };
    Ok((h_hats.iter().map(|e| map.apply(e)).collect(), map))
}

/// Euclidean norm of the residual between an aligned estimate and its
/// ground truth (not divided by sqrt(T)).
pub fn adjusted_rmse(h_hat_aligned: &[f64], h: &[f64]) -> Result<f64> {
    if h_hat_aligned.len() != h.len() {
        return Err(Error::data(format!(
            "adjusted_rmse: length mismatch {} vs {}",
            h_hat_aligned.len(),
            h.len()
        )));
    }
    Ok(h_hat_aligned
        .iter()
        .zip(h)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Time-weighted Mann-Kendall monotonicity:
/// `sum_{t<u} sign(h_u - h_t) (u - t) / sum_{t<u} (u - t)`, in [-1, 1].
pub fn mk_monotonicity(h: &[f64]) -> Result<f64> {
    let n = h.len();
    if n < 2 {
        return Err(Error::data(format!(
            "mk_monotonicity: need at least 2 steps, got {n}"
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..n {
        for u in t + 1..n {
            let w = (u - t) as f64;
            num += w * ((h[u] > h[t]) as i32 - (h[u] < h[t]) as i32) as f64;
            den += w;
        }
    }
    Ok(num / den)
}

/// Minimum pairwise correlation over all trajectory pairs, self-pairs
/// included (a self-pair contributes 1).
pub fn trendability(hs: &[Vec<f64>]) -> Result<f64> {
    if hs.is_empty() {
        return Err(Error::data("trendability: no trajectories".to_string()));
    }
    let mut min = 1.0f64;
    for (k, a) in hs.iter().enumerate() {
        for b in hs.iter().skip(k + 1) {
            min = min.min(correlation(a, b)?);
        }
    }
    Ok(min)
}

/// Smallest 0-based index `t` with `h[t] >= h_ref_final`.
pub fn prognosis_time(h: &[f64], h_ref_final: f64) -> Result<usize> {
    h.iter()
        .position(|&v| v >= h_ref_final)
        .ok_or_else(|| {
            Error::data(format!(
                "prognosis_time: index never reaches reference {h_ref_final}"
            ))
        })
}

/// `exp(-std_k(h at t_P) / mean_k |h at t_P - h_0|)` where `t_P` is each
/// trajectory's first crossing of the least-worn unit's final value.
///
/// Population standard deviation; the reference final value is the minimum
/// over trajectories, so every trajectory crosses it.
pub fn prognosability(hs: &[Vec<f64>]) -> Result<f64> {
    if hs.is_empty() {
        return Err(Error::data("prognosability: no trajectories".to_string()));
    }
    for (k, h) in hs.iter().enumerate() {
        if h.is_empty() {
            return Err(Error::data(format!("prognosability: trajectory {k} empty")));
        }
    }
    let ref_final = hs
        .iter()
        .map(|h| *h.last().expect("nonempty"))
        .fold(f64::INFINITY, f64::min);
    let mut at_tp = Vec::with_capacity(hs.len());
    let mut ranges = Vec::with_capacity(hs.len());
    for h in hs {
        let tp = prognosis_time(h, ref_final)?;
        at_tp.push(h[tp]);
        ranges.push((h[tp] - h[0]).abs());
    }
    let n = hs.len() as f64;
    let mean_tp: f64 = at_tp.iter().sum::<f64>() / n;
    let var: f64 = at_tp.iter().map(|v| (v - mean_tp) * (v - mean_tp)).sum::<f64>() / n;
    let mean_range: f64 = ranges.iter().sum::<f64>() / n;
    if mean_range == 0.0 {
        return Err(Error::numerical(
            "prognosability: zero degradation range".to_string(),
        ));
    }
    Ok((-var.sqrt() / mean_range).exp())
}

/// Steps between the first crossing of `threshold` and the fault onset
/// (both as 1-based step numbers); `None` when the index never crosses
/// (no alarm).
pub fn delay(h: &[f64], fault_onset: usize, threshold: f64) -> Option<f64> {
    h.iter()
        .position(|&v| v >= threshold)
        .map(|i| (i + 1) as f64 - fault_onset as f64)
}

/// Reference HI for alarm scoring: rises linearly to 1 at the 1-based
/// `onset` step, then holds 1. Entry `i` (0-based) is `min(1, (i+1)/onset)`.
pub fn ramp_truth(len: usize, onset: usize) -> Result<Vec<f64>> {
    if onset < 1 {
        return Err(Error::config("ramp_truth: onset must be >= 1".to_string()));
    }
    Ok((0..len)
        .map(|i| ((i + 1) as f64 / onset as f64).min(1.0))
        .collect())
}

/// Root sum of squared errors against a reference, with the estimate
/// capped at 1 first.
pub fn rsse(h: &[f64], truth: &[f64]) -> Result<f64> {
    if h.len() != truth.len() {
        return Err(Error::data(format!(
            "rsse: length mismatch {} vs {}",
            h.len(),
            truth.len()
        )));
    }
    Ok(h.iter()
        .zip(truth)
        .map(|(a, b)| {
            let c = a.min(1.0);
            (c - b) * (c - b)
        })
        .sum::<f64>()
        .sqrt())
}

/// Alarm outcome for one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DelayOutcome {
    /// Steps past the fault onset (negative = early alarm).
    Alarm(f64),
    /// The index never crossed the threshold.
    NoAlarm,
}

impl Serialize for DelayOutcome {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DelayOutcome::Alarm(v) => s.serialize_f64(*v),
            DelayOutcome::NoAlarm => s.serialize_str("no_alarm"),
        }
    }
}

/// Per-trajectory metric values; truth-dependent entries are absent when no
/// ground truth was supplied.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryMetrics {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjusted_rmse: Option<f64>,
    pub mk_monotonicity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelayOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rsse: Option<f64>,
}

/// Full evaluation report: per-trajectory rows plus fleet-level scalars.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub per_trajectory: Vec<TrajectoryMetrics>,
    pub trendability: f64,
    pub prognosability: f64,
}

impl MetricsReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Flat CSV, one row per trajectory; fleet scalars repeated per row.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let fmt_opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            w,
            "id,correlation,adjusted_rmse,mk_monotonicity,trendability,prognosability,delay,rsse"
        )
        .map_err(|e| Error::io("metrics csv", e))?;
        for row in &self.per_trajectory {
            let delay = match row.delay {
                Some(DelayOutcome::Alarm(v)) => v.to_string(),
                Some(DelayOutcome::NoAlarm) => "no_alarm".to_string(),
                None => String::new(),
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                row.id,
                fmt_opt(&row.correlation),
                fmt_opt(&row.adjusted_rmse),
                row.mk_monotonicity,
                self.trendability,
                self.prognosability,
                delay,
                fmt_opt(&row.rsse),
            )
            .map_err(|e| Error::io("metrics csv", e))?;
        }
        Ok(())
    }
}
