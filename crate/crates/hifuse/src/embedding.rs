//! Diversity-regularized semi-supervised embedding.
//!
//! A dense network maps feature vectors toward a fixed center so that
//! healthy samples land near it, labeled-abnormal samples are pushed away
//! (an inverse-distance penalty), and unlabeled samples are pulled gently.
//! A diversity term on each batch's embedding Gram matrix penalizes
//! rank collapse, keeping the per-timestep embedding rows useful as
//! multiple distinct condition indicators downstream.
//!
//! Training is bit-deterministic given the seed: fixed weight-draw order,
//! seeded shuffles, fixed-order reductions.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{assign_labels, DatasetSplit, ScalerParams, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, spd_log_det, sym_eigenvalues};
use crate::{HealthIndex, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

/// Network shape: `layer_widths[0]` is the input dimension, the last width
/// is the embedding dimension, and each subsequent layer has one activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl NetworkSpec {
    /// The conventional shape: input, hidden relu layers, linear output.
    pub fn with_dims(f_dim: usize, hidden: &[usize], k: usize) -> Self {
        let mut layer_widths = Vec::with_capacity(hidden.len() + 2);
        layer_widths.push(f_dim);
        layer_widths.extend_from_slice(hidden);
        layer_widths.push(k);
        let mut activations = vec![Activation::Relu; hidden.len()];
        activations.push(Activation::Linear);
        Self {
            layer_widths,
            activations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::config(
                "network: need at least input and output widths".to_string(),
            ));
        }
        if self.layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::config("network: zero-width layer".to_string()));
        }
        if self.activations.len() != self.layer_widths.len() - 1 {
            return Err(Error::config(format!(
                "network: {} activations for {} layers",
                self.activations.len(),
                self.layer_widths.len() - 1
            )));
        }
        if self.activations.last() != Some(&Activation::Linear) {
            return Err(Error::config(
                "network: final layer must be linear".to_string(),
            ));
        }
        Ok(())
    }

    pub fn f_dim(&self) -> usize {
        self.layer_widths[0]
    }

    /// Embedding dimension.
    pub fn k(&self) -> usize {
        *self.layer_widths.last().expect("validated non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the unlabeled pull-in term.
    pub mu: f64,
    /// Weight decay on the network weights.
    pub nu: f64,
    /// Weight of the per-batch diversity term; 0 disables it.
    pub lambda_div: f64,
    pub seed: u64,
    /// Floor on the squared distance inside the abnormal inverse term.
    pub eps_dist: f64,
    /// Jitter added to the Gram diagonal before the eigendecomposition.
    pub eps_jitter: f64,
    /// Embedding dimension.
    pub k: usize,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            epochs: 1000,
            batch_size: 128,
            mu: 0.1,
            nu: 1e-3,
            lambda_div: 1e-3,
            seed: 42,
            eps_dist: 1e-6,
            eps_jitter: 1e-6,
            k: 16,
            hidden: vec![32, 32],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("lr", self.lr),
            ("mu", self.mu),
            ("nu", self.nu),
            ("eps_dist", self.eps_dist),
            ("eps_jitter", self.eps_jitter),
        ];
        for (name, v) in positives {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!(
                    "train: {name} must be finite and positive, got {v}"
                )));
            }
        }
        if !(self.lambda_div.is_finite() && self.lambda_div >= 0.0) {
            return Err(Error::config(format!(
                "train: lambda_div must be finite and >= 0, got {}",
                self.lambda_div
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train: batch_size must be >= 1".to_string()));
        }
        if self.k == 0 {
            return Err(Error::config("train: k must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn network_spec(&self, f_dim: usize) -> NetworkSpec {
        NetworkSpec::with_dims(f_dim, &self.hidden, self.k)
    }
}

/// Bias-free dense network. Weight matrices are `[fan_in, fan_out]`; a
/// batch forwards as repeated `x W` with the layer activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    acts: Vec<Activation>,
    weights: Vec<Array2<f64>>,
}

impl Mlp {
    /// Symmetric uniform fan-in initialization, entries drawn row-major per
    /// layer so the same rng state always yields the same weights.
    pub fn init_with_rng(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::with_capacity(spec.activations.len());
        for l in 0..spec.activations.len() {
            let (rows, cols) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
            let bound = 1.0 / (rows as f64).sqrt();
            let mut w = Array2::zeros((rows, cols));
            for i in 0..rows {
                for j in 0..cols {
                    w[[i, j]] = rng.gen_range(-bound..bound);
                }
            }
            weights.push(w);
        }
        Ok(Self {
            widths: spec.layer_widths.clone(),
            acts: spec.activations.clone(),
            weights,
        })
    }

    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        Self::init_with_rng(spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Builds a network from explicit weights, validating shapes.
    pub fn from_weights(spec: &NetworkSpec, weights: Vec<Array2<f64>>) -> Result<Self> {
        spec.validate()?;
        if weights.len() != spec.activations.len() {
            return Err(Error::data(format!(
                "network: {} weight matrices for {} layers",
                weights.len(),
                spec.activations.len()
            )));
        }
        for (l, w) in weights.iter().enumerate() {
            let want = (spec.layer_widths[l], spec.layer_widths[l + 1]);
            if w.dim() != want {
                return Err(Error::data(format!(
                    "network: layer {l} weights are {:?}, expected {want:?}",
                    w.dim()
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("network: non-finite weight in layer {l}")));
            }
        }
        Ok(Self {
            widths: spec.layer_widths.clone(),
            acts: spec.activations.clone(),
            weights,
        })
    }

    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec {
            layer_widths: self.widths.clone(),
            activations: self.acts.clone(),
        }
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn f_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn k(&self) -> usize {
        *self.widths.last().expect("non-empty")
    }

    /// Post-activation outputs per layer, input first. With relu the
    /// derivative is recoverable from the post-activation alone
    /// (`post > 0` iff `pre > 0`), so this cache suffices for backprop.
    fn forward_cached(&self, x: &ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(x.to_owned());
        for (w, act) in self.weights.iter().zip(&self.acts) {
            let mut z = acts.last().expect("non-empty").dot(w);
            if *act == Activation::Relu {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.f_dim() {
            return Err(Error::data(format!(
                "network: input has {} features, expected {}",
                x.ncols(),
                self.f_dim()
            )));
        }
        Ok(self.forward_cached(x).pop().expect("non-empty"))
    }

    /// Gradients of a scalar loss w.r.t. every weight matrix, given the
    /// forward cache and the loss gradient at the output.
    fn backward(&self, cache: &[Array2<f64>], d_out: Array2<f64>) -> Vec<Array2<f64>> {
        let mut grads = vec![Array2::zeros((0, 0)); self.weights.len()];
        let mut g = d_out;
        for l in (0..self.weights.len()).rev() {
            if self.acts[l] == Activation::Relu {
                g.zip_mut_with(&cache[l + 1], |gv, &a| {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            grads[l] = cache[l].t().dot(&g);
            if l > 0 {
                g = g.dot(&self.weights[l].t());
            }
        }
        grads
    }

    /// Squared Frobenius norm over all weight matrices.
    pub fn theta_frob_sq(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    /// All weights flattened layer by layer, row-major.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for w in &self.weights {
            out.extend(w.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::data(format!(
                "network: {} parameters given, expected {}",
                params.len(),
                self.n_params()
            )));
        }
        let mut offset = 0;
        for w in &mut self.weights {
            for v in w.iter_mut() {
                *v = params[offset];
                offset += 1;
            }
        }
        Ok(())
    }
}

fn check_labels(labels: &[i8], rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::data(format!(
            "labels: {} labels for {rows} samples",
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|l| ![-1, 0, 1].contains(*l)) {
        return Err(Error::data(format!("labels: invalid label {l}")));
    }
    Ok(())
}

/// Hypersphere loss over embedding rows `y_i = phi(x_i) - alpha`:
/// healthy (+1) rows contribute their squared distance, abnormal (-1) rows
/// the inverse squared distance (floored at `eps_dist`), unlabeled (0)
/// rows `mu` times the squared distance, plus `nu` times the squared
/// Frobenius norm of the weights. A sum over samples, not a mean.
pub fn deepsad_loss(
    y: &ArrayView2<f64>,
    labels: &[i8],
    mu: f64,
    nu: f64,
    theta_frob_sq: f64,
    eps_dist: f64,
) -> Result<f64> {
    check_labels(labels, y.nrows())?;
    let mut loss = nu * theta_frob_sq;
    for (row, &l) in y.rows().into_iter().zip(labels) {
        let d2: f64 = row.iter().map(|v| v * v).sum();
        loss += match l {
            1 => d2,
            0 => mu * d2,
            _ => 1.0 / d2.max(eps_dist),
        };
    }
    Ok(loss)
}

/// `Y^T Y + eps_jitter I`.
pub fn gram_matrix(y: &ArrayView2<f64>, eps_jitter: f64) -> Array2<f64> {
    let mut c = y.t().dot(y);
    for i in 0..c.nrows() {
        c[[i, i]] += eps_jitter;
    }
    c
}

/// Diversity of a Gram matrix via its eigenvalues: `sum_k f(sigma_k)` with
/// `f(x) = x - ln x`. This is the canonical route.
pub fn diversity_from_gram(c: &ArrayView2<f64>) -> Result<f64> {
    let eigs = sym_eigenvalues(&c.to_owned())?;
    let mut loss = 0.0;
    for s in eigs {
        if s <= 0.0 {
            return Err(Error::numerical(format!(
                "diversity: non-positive Gram eigenvalue {s}"
            )));
        }
        loss += s - s.ln();
    }
    Ok(loss)
}

/// Same quantity computed as `trace(C) - ln det(C)`; kept as an
/// independent route that must agree with the eigenvalue sum.
pub fn diversity_from_gram_logdet(c: &ArrayView2<f64>) -> Result<f64> {
    let trace: f64 = c.diag().iter().sum();
    Ok(trace - spd_log_det(&c.to_owned())?)
}

/// Gradient of the diversity value w.r.t. the Gram matrix: `-C^{-1} + I`.
pub fn diversity_grad_wrt_gram(c: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut g = spd_inverse(&c.to_owned())?;
    g.mapv_inplace(|v| -v);
    for i in 0..g.nrows() {
        g[[i, i]] += 1.0;
    }
    Ok(g)
}

/// Diversity of a batch of embedding rows.
pub fn diversity_loss(y: &ArrayView2<f64>, eps_jitter: f64) -> Result<f64> {
    diversity_from_gram(&gram_matrix(y, eps_jitter).view())
}

/// Full training loss on one batch of embedding rows: hypersphere term
/// plus `lambda_div` times the batch diversity.
pub fn total_loss(
    y: &ArrayView2<f64>,
    labels: &[i8],
    cfg: &TrainConfig,
    theta_frob_sq: f64,
) -> Result<f64> {
    let mut loss = deepsad_loss(y, labels, cfg.mu, cfg.nu, theta_frob_sq, cfg.eps_dist)?;
    if cfg.lambda_div > 0.0 {
        loss += cfg.lambda_div * diversity_loss(y, cfg.eps_jitter)?;
    }
    Ok(loss)
}

/// Loss of a network on raw (already standardized) inputs; the composition
/// the gradients below are checked against by finite differences.
pub fn training_loss(
    mlp: &Mlp,
    alpha: &[f64],
    x: &ArrayView2<f64>,
    labels: &[i8],
    cfg: &TrainConfig,
) -> Result<f64> {
    let phi = mlp.forward(x)?;
    let y = phi - &row_vector(alpha);
    total_loss(&y.view(), labels, cfg, mlp.theta_frob_sq())
}

/// Loss plus analytic gradients w.r.t. every weight matrix.
pub fn training_loss_and_grads(
    mlp: &Mlp,
    alpha: &[f64],
    x: &ArrayView2<f64>,
    labels: &[i8],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Array2<f64>>)> {
    check_labels(labels, x.nrows())?;
    if alpha.len() != mlp.k() {
        return Err(Error::data(format!(
            "center: length {} for embedding dimension {}",
            alpha.len(),
            mlp.k()
        )));
    }
    if x.ncols() != mlp.f_dim() {
        return Err(Error::data(format!(
            "network: input has {} features, expected {}",
            x.ncols(),
            mlp.f_dim()
        )));
    }
    let cache = mlp.forward_cached(x);
    let y = cache.last().expect("non-empty") - &row_vector(alpha);

    let theta_sq = mlp.theta_frob_sq();
    let mut loss = deepsad_loss(&y.view(), labels, cfg.mu, cfg.nu, theta_sq, cfg.eps_dist)?;

    // d(loss)/dy, row by row
    let mut dy = Array2::zeros(y.dim());
    for ((y_row, mut g_row), &l) in y
        .rows()
        .into_iter()
        .zip(dy.rows_mut().into_iter())
        .zip(labels)
    {
        let d2: f64 = y_row.iter().map(|v| v * v).sum();
        let factor = match l {
            1 => 2.0,
            0 => 2.0 * cfg.mu,
            _ => {
                if d2 > cfg.eps_dist {
                    -2.0 / (d2 * d2)
                } else {
                    0.0
                }
            }
        };
        for (g, &v) in g_row.iter_mut().zip(y_row) {
            *g = factor * v;
        }
    }

    if cfg.lambda_div > 0.0 {
        let c = gram_matrix(&y.view(), cfg.eps_jitter);
        loss += cfg.lambda_div * diversity_from_gram(&c.view())?;
        // dL_div/dY = 2 Y (I - C^{-1})
        let mut i_minus_cinv = spd_inverse(&c)?;
        i_minus_cinv.mapv_inplace(|v| -v);
        for i in 0..i_minus_cinv.nrows() {
            i_minus_cinv[[i, i]] += 1.0;
        }
        dy = dy + (y.dot(&i_minus_cinv)) * (2.0 * cfg.lambda_div);
    }

    let mut grads = mlp.backward(&cache, dy);
    for (g, w) in grads.iter_mut().zip(&mlp.weights) {
        g.zip_mut_with(w, |gv, &wv| *gv += 2.0 * cfg.nu * wv);
    }
    Ok((loss, grads))
}

fn row_vector(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("shape matches")
}

/// Center coordinates too close to zero invite the degenerate solution of
/// mapping everything onto the center, so they are snapped outward.
fn snap_center(mut alpha: Vec<f64>) -> Vec<f64> {
    for a in &mut alpha {
        if a.abs() < 0.1 {
            *a = if *a < 0.0 { -0.1 } else { 0.1 };
        }
    }
    alpha
}

/// Center = mean initial-network output over healthy samples, with
/// near-zero coordinates snapped to +/-0.1 (sign-preserving, +0.1 at zero).
pub fn init_center(mlp: &Mlp, healthy: &ArrayView2<f64>) -> Result<Vec<f64>> {
    if healthy.nrows() == 0 {
        return Err(Error::data(
            "center: no healthy samples to initialize from".to_string(),
        ));
    }
    let phi = mlp.forward(healthy)?;
    let mean = phi.mean_axis(Axis(0)).expect("non-empty");
    Ok(snap_center(mean.to_vec()))
}

/// Count of Gram eigenvalues above `rel_tol` times the largest; the
/// effective rank of the embedding.
pub fn gram_rank(y: &ArrayView2<f64>, rel_tol: f64) -> Result<usize> {
    let c = y.t().dot(y);
    let eigs = sym_eigenvalues(&c)?;
    let max = eigs.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Ok(0);
    }
    Ok(eigs.iter().filter(|&&s| s > rel_tol * max).count())
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shapes: &[Array2<f64>], lr: f64) -> Self {
        Self {
            m: shapes.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v: shapes.iter().map(|w| Array2::zeros(w.dim())).collect(),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, weights: &mut [Array2<f64>], grads: &[Array2<f64>]) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        for ((w, g), (m, v)) in weights
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(w)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                    *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
                });
        }
    }
}

/// A trained embedding: the network, its fixed center, the feature scaler
/// it was trained under, the config used, and the per-epoch loss trace.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    mlp: Mlp,
    pub center: Vec<f64>,
    pub scaler: ScalerParams,
    pub train_config: TrainConfig,
    pub loss_trace: Vec<f64>,
}

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct ModelFileRef<'a> {
    format_version: u32,
    spec: NetworkSpec,
    weights: &'a [Array2<f64>],
    center: &'a [f64],
    scaler: &'a ScalerParams,
    train_config: &'a TrainConfig,
    loss_trace: &'a [f64],
}

#[derive(Deserialize)]
struct ModelFileOwned {
    format_version: u32,
    spec: NetworkSpec,
    weights: Vec<Array2<f64>>,
    center: Vec<f64>,
    scaler: ScalerParams,
    train_config: TrainConfig,
    loss_trace: Vec<f64>,
}

impl EmbeddingModel {
    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn spec(&self) -> NetworkSpec {
        self.mlp.spec()
    }

    pub fn k(&self) -> usize {
        self.mlp.k()
    }

    pub fn f_dim(&self) -> usize {
        self.mlp.f_dim()
    }

    /// Embeds a standardized feature matrix: `phi(x) - center` per row.
    pub fn embed_matrix(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        let phi = self.mlp.forward(x)?;
        Ok(phi - &row_vector(&self.center))
    }

    /// Embeds a raw trajectory, applying the stored scaler first.
    pub fn embed(&self, traj: &Trajectory) -> Result<Array2<f64>> {
        let x = self.scaler.transform(&traj.features().view())?;
        self.embed_matrix(&x.view())
    }

    /// The squared embedding norm per timestep, usable directly as a
    /// (non-monotone) health index.
    pub fn anomaly_score(&self, traj: &Trajectory) -> Result<HealthIndex> {
        let y = self.embed(traj)?;
        let values: Vec<f64> = y
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum())
            .collect();
        Ok(HealthIndex {
            raw: values.clone(),
            values,
            provenance: Provenance::AnomalyScore,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFileRef {
            format_version: MODEL_FORMAT_VERSION,
            spec: self.mlp.spec(),
            weights: self.mlp.weights(),
            center: &self.center,
            scaler: &self.scaler,
            train_config: &self.train_config,
            loss_trace: &self.loss_trace,
        };
        let json = serde_json::to_string_pretty(&file).map_err(|e| {
            Error::data(format!("model serialization failed: {e}"))
        })?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: ModelFileOwned = serde_json::from_str(&text).map_err(|e| {
            Error::data(format!("model file {}: {e}", path.display()))
        })?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::data(format!(
                "model file {}: format version {} unsupported (expected {})",
                path.display(),
                file.format_version,
                MODEL_FORMAT_VERSION
            )));
        }
        let mlp = Mlp::from_weights(&file.spec, file.weights)?;
        if file.center.len() != mlp.k() || file.center.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "model file {}: center is invalid",
                path.display()
            )));
        }
        if file.scaler.f_dim() != mlp.f_dim() {
            return Err(Error::data(format!(
                "model file {}: scaler has {} features, network {}",
                path.display(),
                file.scaler.f_dim(),
                mlp.f_dim()
            )));
        }
        Ok(Self {
            mlp,
            center: file.center,
            scaler: file.scaler,
            train_config: file.train_config,
            loss_trace: file.loss_trace,
        })
    }
}

/// Assembled training inputs: standardized sample rows and their labels.
struct TrainingSet {
    x: Array2<f64>,
    labels: Vec<i8>,
    scaler: ScalerParams,
}

/// The scaler is fit on all training rows plus the test trajectory's
/// healthy prefix; that same prefix joins the samples as healthy, so test
/// degradation never leaks into training.
fn assemble(split: &DatasetSplit) -> Result<TrainingSet> {
    let mut scaler_views = Vec::new();
    for (traj, _) in &split.train {
        scaler_views.push(traj.features().view());
    }
    let (test_traj, test_spec) = &split.test;
    let prefix = test_traj
        .features()
        .slice(ndarray::s![..test_spec.t_healthy, ..]);
    if test_spec.t_healthy > 0 {
        scaler_views.push(prefix);
    }
    let scaler = ScalerParams::fit(&scaler_views)?;

    let f = split.train[0].0.f_dim();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (traj, spec) in &split.train {
        let std = scaler.transform(&traj.features().view())?;
        rows.extend(std.iter().copied());
        labels.extend(assign_labels(traj, spec)?);
    }
    if test_spec.t_healthy > 0 {
        let std = scaler.transform(&prefix)?;
        rows.extend(std.iter().copied());
        labels.extend(std::iter::repeat(1i8).take(std.nrows()));
    }
    let n = rows.len() / f;
    let x = Array2::from_shape_vec((n, f), rows).expect("row-major assembly");
    Ok(TrainingSet { x, labels, scaler })
}

/// Trains the embedding on a dataset split. Deterministic given the seed;
/// aborts with a diagnostic if the loss leaves the finite range.
pub fn train(split: &DatasetSplit, cfg: &TrainConfig) -> Result<EmbeddingModel> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::data("train: no training trajectories".to_string()));
    }
    let set = assemble(split)?;
    let spec = cfg.network_spec(set.x.ncols());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mlp = Mlp::init_with_rng(&spec, &mut rng)?;

    let healthy_rows: Vec<usize> = set
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == 1)
        .map(|(i, _)| i)
        .collect();
    let healthy = set.x.select(Axis(0), &healthy_rows);
    let center = init_center(&mlp, &healthy.view())?;

    let n = set.x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(mlp.weights(), cfg.lr);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = set.x.select(Axis(0), chunk);
            let labels: Vec<i8> = chunk.iter().map(|&i| set.labels[i]).collect();
            let (loss, grads) =
                training_loss_and_grads(&mlp, &center, &x.view(), &labels, cfg)?;
            if !loss.is_finite() {
                return Err(Error::numerical(format!(
                    "training diverged: non-finite loss at epoch {epoch}, batch {b}"
                )));
            }
            adam.step(&mut mlp.weights, &grads);
            epoch_loss += loss;
            batches += 1;
        }
        loss_trace.push(epoch_loss / batches.max(1) as f64);
    }

    if mlp.weights.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
        return Err(Error::numerical(
            "training diverged: non-finite weights after final epoch".to_string(),
        ));
    }
    Ok(EmbeddingModel {
        mlp,
        center,
        scaler: set.scaler,
        train_config: cfg.clone(),
        loss_trace,
    })
}
