//! Data model and ingestion for run-to-failure trajectories.
//!
//! A [`Trajectory`] is a `T x F` feature matrix whose rows are ordered by
//! acquisition time. Labeling is window-based: the first `t_healthy` rows
//! are known healthy (+1), rows from `t_faulty` on are known abnormal (-1),
//! and everything in between is unlabeled (0). Test trajectories never
//! declare a faulty window, since in deployment the degraded threshold of a
//! running machine is unknown.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One run-to-failure trajectory: `T` timesteps of `F` features.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    id: String,
    features: Array2<f64>,
    timestamps: Option<Vec<f64>>,
}

impl Trajectory {
    /// Builds a trajectory, enforcing `T >= 2`, `F >= 1`, finite entries and
    /// strictly increasing timestamps when present.
    pub fn new(
        id: impl Into<String>,
        features: Array2<f64>,
        timestamps: Option<Vec<f64>>,
    ) -> Result<Self> {
        let id = id.into();
        if features.nrows() < 2 {
            return Err(Error::data(format!(
                "trajectory {id}: needs at least 2 timesteps, got {}",
                features.nrows()
            )));
        }
        if features.ncols() < 1 {
            return Err(Error::data(format!("trajectory {id}: needs at least 1 feature")));
        }
        if let Some((t, f)) = first_non_finite(&features.view()) {
            return Err(Error::data(format!(
                "trajectory {id}: non-finite feature at row {t}, column {f}"
            )));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != features.nrows() {
                return Err(Error::data(format!(
                    "trajectory {id}: {} timestamps for {} rows",
                    ts.len(),
                    features.nrows()
                )));
            }
            for (i, w) in ts.windows(2).enumerate() {
                if !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite() {
                    return Err(Error::data(format!(
                        "trajectory {id}: timestamps not strictly increasing at row {}",
                        i + 1
                    )));
                }
            }
        }
        Ok(Self {
            id,
            features,
            timestamps,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    /// Timestamps in seconds; when absent, `t` is the row index.
    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    pub fn t_len(&self) -> usize {
        self.features.nrows()
    }

    pub fn f_dim(&self) -> usize {
        self.features.ncols()
    }
}

fn first_non_finite(m: &ArrayView2<f64>) -> Option<(usize, usize)> {
    for ((t, f), v) in m.indexed_iter() {
        if !v.is_finite() {
            return Some((t, f));
        }
    }
    None
}

/// Healthy/abnormal window thresholds, as 1-based timestep counts.
///
/// `t_faulty` is absent for test trajectories: the degraded threshold of a
/// machine still in operation cannot be known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub t_healthy: usize,
    pub t_faulty: Option<usize>,
}

impl LabelSpec {
    pub fn new(t_healthy: usize, t_faulty: usize) -> Self {
        Self {
            t_healthy,
            t_faulty: Some(t_faulty),
        }
    }

    /// Spec for a test trajectory: healthy prefix only.
    pub fn healthy_prefix(t_healthy: usize) -> Self {
        Self {
            t_healthy,
            t_faulty: None,
        }
    }

    /// Checks `0 < T_d < T_f <= T` (the `T_f` part only when declared).
    pub fn validate(&self, t_len: usize) -> Result<()> {
        if self.t_healthy == 0 {
            return Err(Error::data("label window: t_healthy must be >= 1".to_string()));
        }
        if self.t_healthy > t_len {
            return Err(Error::data(format!(
                "label window: t_healthy {} exceeds trajectory length {}",
                self.t_healthy, t_len
            )));
        }
        if let Some(tf) = self.t_faulty {
            if tf <= self.t_healthy {
                return Err(Error::data(format!(
                    "label window: t_faulty {} must exceed t_healthy {}",
                    tf, self.t_healthy
                )));
            }
            if tf > t_len {
                return Err(Error::data(format!(
                    "label window: t_faulty {} exceeds trajectory length {}",
                    tf, t_len
                )));
            }
        }
        Ok(())
    }
}

/// Training trajectories with full label windows plus one test trajectory
/// with only a healthy prefix.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<(Trajectory, LabelSpec)>,
    pub test: (Trajectory, LabelSpec),
}

impl DatasetSplit {
    pub fn new(train: Vec<(Trajectory, LabelSpec)>, test: (Trajectory, LabelSpec)) -> Result<Self> {
        for (traj, spec) in &train {
            spec.validate(traj.t_len())?;
            if spec.t_faulty.is_none() {
                return Err(Error::data(format!(
                    "trajectory {}: training trajectories must declare t_faulty",
                    traj.id()
                )));
            }
        }
        test.1.validate(test.0.t_len())?;
        if test.1.t_faulty.is_some() {
            return Err(Error::data(format!(
                "trajectory {}: test trajectories must not declare t_faulty",
                test.0.id()
            )));
        }
        Ok(Self { train, test })
    }
}

/// Per-timestep labels: +1 for `t <= T_d`, -1 for `t >= T_f`, 0 otherwise
/// (1-based `t`).
pub fn assign_labels(traj: &Trajectory, spec: &LabelSpec) -> Result<Vec<i8>> {
    spec.validate(traj.t_len())?;
    let t_len = traj.t_len();
    let mut labels = vec![0i8; t_len];
    for (i, l) in labels.iter_mut().enumerate() {
        let t = i + 1;
        if t <= spec.t_healthy {
            *l = 1;
        } else if spec.t_faulty.is_some_and(|tf| t >= tf) {
            *l = -1;
        }
    }
    Ok(labels)
}

/// Per-feature affine scaler: `x -> (x - mean) / std`, with zero-variance
/// features mapped to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    /// Population standard deviation; 0.0 marks a degenerate feature.
    pub std: Vec<f64>,
}

impl ScalerParams {
    /// Fits mean and population standard deviation over the pooled rows of
    /// the given matrices. Features whose deviation is negligible relative
    /// to their magnitude are marked degenerate (std stored as 0).
    pub fn fit(mats: &[ArrayView2<f64>]) -> Result<Self> {
        if mats.is_empty() {
            return Err(Error::data("scaler: no trajectories to fit on".to_string()));
        }
        let f = mats[0].ncols();
        for m in mats {
            if m.ncols() != f {
                return Err(Error::data(format!(
                    "scaler: inconsistent feature counts {} vs {f}",
                    m.ncols()
                )));
            }
        }
        let n: usize = mats.iter().map(|m| m.nrows()).sum();
        if n == 0 {
            return Err(Error::data("scaler: no rows to fit on".to_string()));
        }
        let mut mean = vec![0.0; f];
        for m in mats {
            for row in m.rows() {
                for (j, v) in row.iter().enumerate() {
                    mean[j] += v;
                }
            }
        }
        for mj in &mut mean {
            *mj /= n as f64;
        }
        let mut var = vec![0.0; f];
        for m in mats {
            for row in m.rows() {
                for (j, v) in row.iter().enumerate() {
                    let d = v - mean[j];
                    var[j] += d * d;
                }
            }
        }
        let std = var
            .iter()
            .zip(&mean)
            .map(|(v, m)| {
                let s = (v / n as f64).sqrt();
                if s <= 1e-12 * (1.0 + m.abs()) {
                    0.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn f_dim(&self) -> usize {
        self.mean.len()
    }

    /// Applies the scaler to a `T x F` matrix.
    pub fn transform(&self, m: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if m.ncols() != self.f_dim() {
            return Err(Error::data(format!(
                "scaler: fitted on {} features, input has {}",
                self.f_dim(),
                m.ncols()
            )));
        }
        let mut out = Array2::<f64>::zeros((m.nrows(), m.ncols()));
        for (t, row) in m.rows().into_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out[[t, j]] = if self.std[j] == 0.0 {
                    0.0
                } else {
                    (v - self.mean[j]) / self.std[j]
                };
            }
        }
        Ok(out)
    }

    /// Inverse transform; degenerate features are restored to their mean.
    pub fn inverse_transform(&self, m: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if m.ncols() != self.f_dim() {
            return Err(Error::data(format!(
                "scaler: fitted on {} features, input has {}",
                self.f_dim(),
                m.ncols()
            )));
        }
        let mut out = Array2::<f64>::zeros((m.nrows(), m.ncols()));
        for (t, row) in m.rows().into_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out[[t, j]] = if self.std[j] == 0.0 {
                    self.mean[j]
                } else {
                    v * self.std[j] + self.mean[j]
                };
            }
        }
        Ok(out)
    }
}

/// Standardizes trajectories to per-feature zero mean and unit variance,
/// fitting the scaler over all of them pooled.
pub fn standardize(trajs: &[Trajectory]) -> Result<(Vec<Trajectory>, ScalerParams)> {
    let views: Vec<ArrayView2<f64>> = trajs.iter().map(|t| t.features().view()).collect();
    let scaler = ScalerParams::fit(&views)?;
    let mut out = Vec::with_capacity(trajs.len());
    for traj in trajs {
        let scaled = scaler.transform(&traj.features().view())?;
        out.push(Trajectory::new(
            traj.id().to_string(),
            scaled,
            traj.timestamps().map(|ts| ts.to_vec()),
        )?);
    }
    Ok((out, scaler))
}

/// Input file layout for [`load_trajectory`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryFormat {
    /// CSV with header `t,f0,...,f{F-1}`.
    FeatureCsv,
    /// Single-channel signal: header `sample_rate_hz=<int>`, one sample per
    /// line. Loaded as an F=1 trajectory with timestamps from the rate.
    RawSignal,
}

/// Loads one trajectory from disk.
pub fn load_trajectory(path: &Path, format: TrajectoryFormat) -> Result<Trajectory> {
    match format {
        TrajectoryFormat::FeatureCsv => load_feature_csv(path),
        TrajectoryFormat::RawSignal => {
            let (samples, rate) = load_raw_signal(path)?;
            let shown = path.display().to_string();
            let n = samples.len();
            let timestamps = (0..n).map(|i| i as f64 / rate as f64).collect();
            let features =
                Array2::from_shape_vec((n, 1), samples).expect("sample count matches shape");
            Trajectory::new(file_stem(path), features, Some(timestamps)).map_err(|e| match e {
                Error::Data(msg) => Error::data(format!("{shown}: {msg}")),
                other => other,
            })
        }
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_feature_csv(path: &Path) -> Result<Trajectory> {
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&shown, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));

    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("{shown}: {e}")))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyFile { path: shown });
    }
    if headers.len() < 2 {
        return Err(Error::MalformedHeader {
            path: shown,
            detail: format!("expected `t,f0,...`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    if &headers[0] != "t" {
        return Err(Error::MalformedHeader {
            path: shown,
            detail: format!("first column must be `t`, got `{}`", &headers[0]),
        });
    }
    for (j, name) in headers.iter().skip(1).enumerate() {
        let want = format!("f{j}");
        if name != want {
            return Err(Error::MalformedHeader {
                path: shown,
                detail: format!("column {} must be `{want}`, got `{name}`", j + 1),
            });
        }
    }
    let f = headers.len() - 1;

    let mut times: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1; // 1-based data row, header not counted
        let record = record.map_err(|e| Error::data(format!("{shown}: row {row}: {e}")))?;
        if record.len() != f + 1 {
            return Err(Error::data(format!(
                "{shown}: row {row}: expected {} fields, got {}",
                f + 1,
                record.len()
            )));
        }
        let t = parse_finite(&record[0]).ok_or_else(|| Error::NonFiniteValue {
            path: shown.clone(),
            row,
            col: "t".to_string(),
        })?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::NonMonotoneTime {
                    path: shown,
                    row,
                });
            }
        }
        times.push(t);
        for j in 0..f {
            let v = parse_finite(&record[j + 1]).ok_or_else(|| Error::NonFiniteValue {
                path: shown.clone(),
                row,
                col: format!("f{j}"),
            })?;
            values.push(v);
        }
    }
    if times.is_empty() {
        return Err(Error::EmptyFile { path: shown });
    }
    if times.len() < 2 {
        return Err(Error::data(format!(
            "{shown}: needs at least 2 rows, got {}",
            times.len()
        )));
    }
    let features =
        Array2::from_shape_vec((times.len(), f), values).expect("row-major values match shape");
    Trajectory::new(file_stem(path), features, Some(times))
}

fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Loads a raw single-channel signal file: header `sample_rate_hz=<int>`,
/// then one sample value per line.
pub fn load_raw_signal(path: &Path) -> Result<(Vec<f64>, u32)> {
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&shown, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header = loop {
        match lines.next() {
            None => return Err(Error::EmptyFile { path: shown }),
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io(&shown, e))?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
        }
    };
    let rate: u32 = header
        .trim()
        .strip_prefix("sample_rate_hz=")
        .and_then(|v| v.parse().ok())
        .filter(|&r| r > 0)
        .ok_or_else(|| Error::MalformedHeader {
            path: shown.clone(),
            detail: format!("expected `sample_rate_hz=<int>`, got `{}`", header.trim()),
        })?;

    let mut samples = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(&shown, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let v = parse_finite(trimmed).ok_or_else(|| Error::NonFiniteValue {
            path: shown.clone(),
            row: i + 1,
            col: "signal".to_string(),
        })?;
        samples.push(v);
    }
    if samples.is_empty() {
        return Err(Error::EmptyFile { path: shown });
    }
    Ok((samples, rate))
}
