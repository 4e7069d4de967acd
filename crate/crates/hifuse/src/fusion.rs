//! Alternating-projection fusion of condition indicators into a health
//! index.
//!
//! Given per-timestep indicator matrices `Y` (one per trajectory), the
//! solver seeks a shared regressor `w` and per-trajectory series `z` in the
//! ideal-HI space minimizing `sum ||Y w - z||^2 + beta ||w||^2`. The ideal
//! space requires `z_t <= 0` over the known healthy prefix, `z_t >= 1` from
//! the faulty threshold on (when one is declared), and monotone
//! non-decrease everywhere. The two blocks alternate: a ridge solve for `w`
//! over all trajectories concatenated, then a per-trajectory projection of
//! `h = Y w` (prefix clamp, suffix clamp, pool-adjacent-violators).
//!
//! The composite clamp-then-PAVA step always lands inside the ideal space
//! but is not in general the exact Euclidean projection onto it; the tests
//! keep an exact quadratic-programming oracle for comparison and the
//! objective trace is recorded after every half-step so descent is
//! observable.
//!
//! This module is deterministic: no RNG, fixed summation order.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::LabelSpec;
use crate::error::{Error, Result};
use crate::{HealthIndex, Provenance};

/// Constraint window for one trajectory's ideal-space projection.
///
/// Unlike [`LabelSpec`], a zero-width healthy prefix (`t_healthy = 0`) is
/// allowed: the projection then only enforces monotonicity (plus the
/// faulty-suffix bound when present).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdealSpaceSpec {
    pub t_healthy: usize,
    pub t_faulty: Option<usize>,
}

impl IdealSpaceSpec {
    pub fn new(t_healthy: usize, t_faulty: usize) -> Self {
        Self {
            t_healthy,
            t_faulty: Some(t_faulty),
        }
    }

    /// Test-trajectory form: no worn-out suffix constraint.
    pub fn healthy_prefix(t_healthy: usize) -> Self {
        Self {
            t_healthy,
            t_faulty: None,
        }
    }

    pub fn validate(&self, t_len: usize) -> Result<()> {
        if self.t_healthy > t_len {
            return Err(Error::data(format!(
                "ideal space: t_healthy {} exceeds length {}",
                self.t_healthy, t_len
            )));
        }
        if let Some(tf) = self.t_faulty {
            if tf <= self.t_healthy {
                return Err(Error::data(format!(
                    "ideal space: t_faulty {} must exceed t_healthy {}",
                    tf, self.t_healthy
                )));
            }
            if tf > t_len {
                return Err(Error::data(format!(
                    "ideal space: t_faulty {} exceeds length {}",
                    tf, t_len
                )));
            }
        }
        Ok(())
    }

    /// Exact membership check (1-based thresholds, tolerance on bounds).
    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        for w in z.windows(2) {
            if w[1] < w[0] - tol {
                return false;
            }
        }
        for &v in z.iter().take(self.t_healthy) {
            if v > tol {
                return false;
            }
        }
        if let Some(tf) = self.t_faulty {
            for &v in z.iter().skip(tf - 1) {
                if v < 1.0 - tol {
                    return false;
                }
            }
        }
        true
    }
}

impl From<LabelSpec> for IdealSpaceSpec {
    fn from(spec: LabelSpec) -> Self {
        Self {
            t_healthy: spec.t_healthy,
            t_faulty: spec.t_faulty,
        }
    }
}

/// Solver parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    /// Ridge weight on `||w||^2`. Zero is permitted but requires a
    /// nonsingular normal matrix.
    pub beta: f64,
    /// Maximum alternating iterations.
    pub iters: usize,
    /// Early exit once the per-iteration objective decrease falls below
    /// this.
    pub tol: f64,
    /// Real-time solve step.
    pub tau: usize,
    /// Disables the PAVA step inside the projection when false (ablation);
    /// clamps still apply.
    pub isotonic: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            beta: 0.05,
            iters: 1000,
            tol: 1e-9,
            tau: 30,
            isotonic: true,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::config("fusion: beta must be >= 0".to_string()));
        }
        if self.iters < 1 {
            return Err(Error::config("fusion: iters must be >= 1".to_string()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::config("fusion: tol must be >= 0".to_string()));
        }
        if self.tau < 1 {
            return Err(Error::config("fusion: tau must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Converged solver output.
///
/// `objective_trace[0]` is the objective at initialization (`w = 1`,
/// projected); each iteration then appends two entries, one after the ridge
/// half-step and one after the projection half-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionState {
    pub w: Vec<f64>,
    pub z_per_traj: Vec<Vec<f64>>,
    pub objective_trace: Vec<f64>,
}

impl FusionState {
    /// Unprojected index `h = Y w` for a trajectory's indicator matrix.
    pub fn raw(&self, y: &ArrayView2<f64>) -> Vec<f64> {
        matvec(y, &self.w)
    }
}

/// Pool-adjacent-violators: the nondecreasing vector closest to `v` in
/// least squares. O(T).
pub fn pava(v: &[f64]) -> Vec<f64> {
    let mut sums: Vec<f64> = Vec::with_capacity(v.len());
    let mut counts: Vec<usize> = Vec::with_capacity(v.len());
    for &x in v {
        sums.push(x);
        counts.push(1);
        while sums.len() >= 2 {
            let n = sums.len();
            let last = sums[n - 1] / counts[n - 1] as f64;
            let prev = sums[n - 2] / counts[n - 2] as f64;
            if prev > last {
                let s = sums.pop().expect("nonempty");
                let c = counts.pop().expect("nonempty");
                *sums.last_mut().expect("nonempty") += s;
                *counts.last_mut().expect("nonempty") += c;
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(v.len());
    for (s, c) in sums.iter().zip(&counts) {
        let mean = s / *c as f64;
        out.extend(std::iter::repeat(mean).take(*c));
    }
    out
}

fn project_with(h: &[f64], spec: &IdealSpaceSpec, isotonic: bool) -> Vec<f64> {
    let mut z = h.to_vec();
    for v in z.iter_mut().take(spec.t_healthy) {
        if *v > 0.0 {
            *v = 0.0;
        }
    }
    if let Some(tf) = spec.t_faulty {
        for v in z.iter_mut().skip(tf - 1) {
            if *v < 1.0 {
                *v = 1.0;
            }
        }
    }
    if isotonic {
        pava(&z)
    } else {
        z
    }
}

/// Projects `h` into the ideal space: clamp the healthy prefix to <= 0,
/// clamp the faulty suffix to >= 1 (when declared), then PAVA.
///
/// The output always satisfies every ideal-space constraint: PAVA of a
/// vector whose prefix is <= 0 keeps that prefix <= 0 (pooling can only
/// lower a prefix value toward later entries' means when they are smaller),
/// and symmetrically the >= 1 suffix is preserved.
pub fn project_ideal(h: &[f64], spec: &IdealSpaceSpec) -> Vec<f64> {
    project_with(h, spec, true)
}

fn matvec(y: &ArrayView2<f64>, w: &[f64]) -> Vec<f64> {
    let wv = Array1::from_vec(w.to_vec());
    y.dot(&wv).to_vec()
}

/// Ridge solve over concatenated trajectories:
/// `w = argmin sum_i ||Y_i w - z_i||^2 + beta ||w||^2` via the normal
/// equations `(sum Y_i^T Y_i + beta I) w = sum Y_i^T z_i`.
pub fn ridge_step(ys: &[ArrayView2<f64>], zs: &[Vec<f64>], beta: f64) -> Result<Vec<f64>> {
    if ys.is_empty() || ys.len() != zs.len() {
        return Err(Error::data(format!(
            "ridge: {} indicator matrices vs {} targets",
            ys.len(),
            zs.len()
        )));
    }
    let k = ys[0].ncols();
    let mut g = Array2::<f64>::zeros((k, k));
    let mut r = vec![0.0; k];
    for (y, z) in ys.iter().zip(zs) {
        if y.ncols() != k {
            return Err(Error::data(format!(
                "ridge: indicator width {} differs from {}",
                y.ncols(),
                k
            )));
        }
        if y.nrows() != z.len() {
            return Err(Error::data(format!(
                "ridge: {} rows vs {} targets",
                y.nrows(),
                z.len()
            )));
        }
        g += &y.t().dot(y);
        let zv = Array1::from_vec(z.clone());
        let yz = y.t().dot(&zv);
        for (ri, v) in r.iter_mut().zip(yz.iter()) {
            *ri += v;
        }
    }
    for i in 0..k {
        g[[i, i]] += beta;
    }
    crate::linalg::solve_spd(&g, &r).map_err(|_| {
        Error::numerical(format!(
            "ridge: normal matrix singular (beta = {beta}); increase beta"
        ))
    })
}

/// `sum_i ||Y_i w - z_i||^2 + beta ||w||^2`.
pub fn apaic_objective(
    w: &[f64],
    zs: &[Vec<f64>],
    ys: &[ArrayView2<f64>],
    beta: f64,
) -> f64 {
    let mut obj = beta * w.iter().map(|v| v * v).sum::<f64>();
    for (y, z) in ys.iter().zip(zs) {
        let h = matvec(y, w);
        obj += h
            .iter()
            .zip(z)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    obj
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Joint alternating solve over any mix of constrained trajectories.
///
/// Starts from `w = 1` with `z` the projection of `Y 1`, then alternates
/// ridge and projection half-steps until the objective decrease drops below
/// `cfg.tol` or `cfg.iters` iterations elapse.
///
/// The composite projection is not the exact Euclidean projection onto the
/// ideal space, so taking its output unconditionally can raise the
/// objective. The z half-step therefore keeps the previous (feasible) `z`
/// of a trajectory whenever the composite candidate would increase that
/// trajectory's `||h - z||^2` term; with the ridge half-step an exact
/// minimizer, the objective trace is non-increasing by construction.
pub fn fit_joint(
    trajs: &[(ArrayView2<f64>, IdealSpaceSpec)],
    cfg: &FusionConfig,
) -> Result<FusionState> {
    cfg.validate()?;
    if trajs.is_empty() {
        return Err(Error::data("fusion: no trajectories given".to_string()));
    }
    let k = trajs[0].0.ncols();
    if k == 0 {
        return Err(Error::data("fusion: zero indicator columns".to_string()));
    }
    for (y, spec) in trajs {
        if y.ncols() != k {
            return Err(Error::data(format!(
                "fusion: indicator width {} differs from {}",
                y.ncols(),
                k
            )));
        }
        spec.validate(y.nrows())?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("fusion: non-finite indicator entry".to_string()));
        }
    }

    let ys: Vec<ArrayView2<f64>> = trajs.iter().map(|(y, _)| y.view()).collect();
    let specs: Vec<&IdealSpaceSpec> = trajs.iter().map(|(_, s)| s).collect();

    let mut w = vec![1.0; k];
    let mut zs: Vec<Vec<f64>> = ys
        .iter()
        .zip(&specs)
        .map(|(y, spec)| project_with(&matvec(y, &w), spec, cfg.isotonic))
        .collect();
    let mut trace = vec![apaic_objective(&w, &zs, &ys, cfg.beta)];
    let mut prev_full = trace[0];

    for it in 1..=cfg.iters {
        w = ridge_step(&ys, &zs, cfg.beta)?;
        trace.push(apaic_objective(&w, &zs, &ys, cfg.beta));

        zs = ys
            .iter()
            .zip(&specs)
            .zip(&zs)
            .map(|((y, spec), z_old)| {
                let h = matvec(y, &w);
                let cand = project_with(&h, spec, cfg.isotonic);
                if sq_dist(&h, &cand) <= sq_dist(&h, z_old) {
                    cand
                } else {
                    z_old.clone()
                }
            })
            .collect();
        let obj = apaic_objective(&w, &zs, &ys, cfg.beta);
        if !obj.is_finite() {
            return Err(Error::numerical(format!(
                "fusion: non-finite objective at iteration {it}"
            )));
        }
        trace.push(obj);

        let decrease = prev_full - obj;
        prev_full = obj;
        if decrease < cfg.tol {
            break;
        }
    }

    Ok(FusionState {
        w,
        z_per_traj: zs,
        objective_trace: trace,
    })
}

/// Offline fit: train trajectories (with faulty windows) solved jointly
/// with one test trajectory constrained only over its healthy prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub state: FusionState,
    pub test_hi: HealthIndex,
}

pub fn fit<'a>(
    train: &[(ArrayView2<'a, f64>, IdealSpaceSpec)],
    test: (ArrayView2<'a, f64>, IdealSpaceSpec),
    cfg: &FusionConfig,
) -> Result<FitOutcome> {
    if test.1.t_faulty.is_some() {
        return Err(Error::data(
            "fusion: test trajectory must not declare t_faulty".to_string(),
        ));
    }
    for (_, spec) in train {
        if spec.t_faulty.is_none() {
            return Err(Error::data(
                "fusion: training trajectories must declare t_faulty".to_string(),
            ));
        }
    }
    let mut trajs: Vec<(ArrayView2<'a, f64>, IdealSpaceSpec)> = train.to_vec();
    trajs.push((test.0.clone(), test.1));
    let state = fit_joint(&trajs, cfg)?;
    let raw = state.raw(&test.0);
    let values = state.z_per_traj.last().expect("at least the test trajectory").clone();
    Ok(FitOutcome {
        state,
        test_hi: HealthIndex {
            values,
            raw,
            provenance: Provenance::Offline,
        },
    })
}

/// Prefix lengths at which the real-time solver runs: multiples of `tau`
/// strictly below `t_len`, then `t_len` itself.
pub fn realtime_solve_points(t_len: usize, tau: usize) -> Vec<usize> {
    let mut pts: Vec<usize> = (1..)
        .map(|k| k * tau)
        .take_while(|&t| t < t_len)
        .collect();
    pts.push(t_len);
    pts
}

/// Real-time fit output: the concatenated HI plus the final full-length
/// solve (whose `w` and train projections match an offline fit).
#[derive(Debug, Clone, PartialEq)]
pub struct RealtimeOutcome {
    pub hi: HealthIndex,
    pub final_state: FusionState,
    pub solve_points: Vec<usize>,
}

/// Re-solves on each test prefix `Y_{:t}` for `t` in
/// [`realtime_solve_points`], emitting the segment `(t - step, t]` of each
/// solve. Every window restarts from `w = 1`; no warm start.
pub fn fit_realtime<'a>(
    train: &[(ArrayView2<'a, f64>, IdealSpaceSpec)],
    test_y: ArrayView2<'a, f64>,
    test_spec: &IdealSpaceSpec,
    cfg: &FusionConfig,
) -> Result<RealtimeOutcome> {
    cfg.validate()?;
    if test_spec.t_faulty.is_some() {
        return Err(Error::data(
            "fusion: test trajectory must not declare t_faulty".to_string(),
        ));
    }
    let t_len = test_y.nrows();
    if cfg.tau > t_len {
        return Err(Error::config(format!(
            "fusion: tau {} exceeds test length {}",
            cfg.tau, t_len
        )));
    }
    let pts = realtime_solve_points(t_len, cfg.tau);
    let mut values = Vec::with_capacity(t_len);
    let mut raw = Vec::with_capacity(t_len);
    let mut prev = 0usize;
    let mut last_state: Option<FusionState> = None;
    for &t in &pts {
        let prefix = test_y.clone().slice_move(ndarray::s![..t, ..]);
        let spec = IdealSpaceSpec::healthy_prefix(test_spec.t_healthy.min(t));
        let out = fit(train, (prefix, spec), cfg)?;
        values.extend_from_slice(&out.test_hi.values[prev..t]);
        raw.extend_from_slice(&out.test_hi.raw[prev..t]);
        prev = t;
        last_state = Some(out.state);
    }
    Ok(RealtimeOutcome {
        hi: HealthIndex {
            values,
            raw,
            provenance: Provenance::Realtime { tau: cfg.tau },
        },
        final_state: last_state.expect("at least one solve point"),
        solve_points: pts,
    })
}
