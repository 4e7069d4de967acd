//! Synthetic run-to-failure generator with known ground-truth health.
//!
//! The ground truth follows three wear phases: a convex incipient rise, a
//! shallow steady-state ramp, then a steep convex deterioration, scaled so
//! the index starts at 0 and ends at exactly 1 and is strictly increasing
//! throughout. Informative features mix an affine image of the index with
//! a monotone power distortion of it plus Gaussian noise; remaining
//! features are seasonal sinusoids or pure noise, nuisances a good health
//! index must ignore.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::dataset::Trajectory;
use crate::error::{Error, Result};

/// End of the incipient phase as a fraction of the final index value.
const PHASE1_LEVEL: f64 = 0.25;
/// End of the steady-state phase as a fraction of the final index value.
const PHASE2_LEVEL: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Trajectory length in steps.
    pub t_len: usize,
    /// Total feature count.
    pub f_dim: usize,
    /// How many features carry the health index.
    pub n_informative: usize,
    /// Step indices `(t1, t2)` splitting incipient / steady / deterioration.
    pub phase_breaks: (usize, usize),
    /// Standard deviation of the additive Gaussian noise.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Replace every informative feature's power distortion with the
    /// identity, making each feature an affine image of the index.
    pub identity_distortion: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            t_len: 300,
            f_dim: 20,
            n_informative: 5,
            phase_breaks: (60, 240),
            noise_sigma: 0.1,
            seed: 7,
            identity_distortion: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (t1, t2) = self.phase_breaks;
        if !(0 < t1 && t1 < t2 && t2 < self.t_len) {
            return Err(Error::config(format!(
                "synth: phase breaks need 0 < t1 < t2 < t_len, got ({t1}, {t2}) with t_len {}",
                self.t_len
            )));
        }
        if t2 + 1 >= self.t_len {
            return Err(Error::config(format!(
                "synth: deterioration phase is empty, t2 = {t2} with t_len {}",
                self.t_len
            )));
        }
        if self.n_informative < 1 || self.n_informative > self.f_dim {
            return Err(Error::config(format!(
                "synth: n_informative must be in 1..={}, got {}",
                self.f_dim, self.n_informative
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::config(format!(
                "synth: noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Per-feature generating parameters, drawn once and shared by every
/// trajectory of a fleet.
#[derive(Debug, Clone)]
struct Semantics {
    /// Informative feature `j` is `a[j]*h + b[j]*h^p[j] + noise`.
    a: Vec<f64>,
    b: Vec<f64>,
    p: Vec<f64>,
    /// Confounders alternate seasonal sinusoid and pure noise; each has an
    /// amplitude, cycles per lifetime and phase (unused for pure noise).
    conf_amp: Vec<f64>,
    conf_cycles: Vec<f64>,
    conf_phase: Vec<f64>,
}

fn draw_semantics(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Semantics {
    let n_inf = cfg.n_informative;
    let n_conf = cfg.f_dim - n_inf;
    let ua = Uniform::new(0.8, 2.0);
    let ub = Uniform::new(0.2, 1.0);
    let up = Uniform::new(1.5, 3.0);
    let mut a = Vec::with_capacity(n_inf);
    let mut b = Vec::with_capacity(n_inf);
    let mut p = Vec::with_capacity(n_inf);
    for j in 0..n_inf {
        a.push(ua.sample(rng));
        let bj = ub.sample(rng);
        let pj = up.sample(rng);
        // feature 0 stays purely linear so the index lies in the feature
        // span exactly
        b.push(if j == 0 { 0.0 } else { bj });
        p.push(if cfg.identity_distortion { 1.0 } else { pj });
    }
    let uamp = Uniform::new(0.5, 1.5);
    let ucyc = Uniform::new(2.0, 6.0);
    let uph = Uniform::new(0.0, std::f64::consts::TAU);
    let mut conf_amp = Vec::with_capacity(n_conf);
    let mut conf_cycles = Vec::with_capacity(n_conf);
    let mut conf_phase = Vec::with_capacity(n_conf);
    for _ in 0..n_conf {
        conf_amp.push(uamp.sample(rng));
        conf_cycles.push(ucyc.sample(rng));
        conf_phase.push(uph.sample(rng));
    }
    Semantics {
        a,
        b,
        p,
        conf_amp,
        conf_cycles,
        conf_phase,
    }
}

/// Three-phase ground truth on `t = 0..t_len`, strictly increasing from
/// exactly 0 to exactly 1.
fn ground_truth(t_len: usize, t1: usize, t2: usize) -> Vec<f64> {
    let last = (t_len - 1) as f64;
    let (c1, c2) = (PHASE1_LEVEL, PHASE2_LEVEL);
    (0..t_len)
        .map(|t| {
            let t = t as f64;
            if t <= t1 as f64 {
                let r = t / t1 as f64;
                c1 * r * r
            } else if t <= t2 as f64 {
                c1 + (c2 - c1) * (t - t1 as f64) / (t2 - t1) as f64
            } else {
                let r = (t - t2 as f64) / (last - t2 as f64);
                c2 + (1.0 - c2) * r * r * r
            }
        })
        .collect()
}

fn build_features(
    sem: &Semantics,
    hi: &[f64],
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let t_len = hi.len();
    let n_inf = sem.a.len();
    let f_dim = n_inf + sem.conf_amp.len();
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let eps = |rng: &mut ChaCha8Rng| {
        if noise_sigma == 0.0 {
            0.0
        } else {
            noise.sample(rng)
        }
    };
    let mut y = Array2::zeros((t_len, f_dim));
    for (t, &h) in hi.iter().enumerate() {
        for j in 0..n_inf {
            y[[t, j]] = sem.a[j] * h + sem.b[j] * h.powf(sem.p[j]) + eps(rng);
        }
        for c in 0..sem.conf_amp.len() {
            let col = n_inf + c;
            y[[t, col]] = if c % 2 == 0 {
                let arg = std::f64::consts::TAU * sem.conf_cycles[c] * t as f64
                    / (t_len - 1) as f64
                    + sem.conf_phase[c];
                sem.conf_amp[c] * arg.sin() + eps(rng)
            } else {
                sem.conf_amp[c] * eps(rng)
            };
        }
    }
    y
}

/// One trajectory plus its ground-truth health index. Deterministic given
/// the config.
pub fn generate(cfg: &SynthConfig) -> Result<(Trajectory, Vec<f64>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sem = draw_semantics(cfg, &mut rng);
    let (t1, t2) = cfg.phase_breaks;
    let hi = ground_truth(cfg.t_len, t1, t2);
    let y = build_features(&sem, &hi, cfg.noise_sigma, &mut rng);
    let traj = Trajectory::new(format!("synth-{}", cfg.seed), y, None)?;
    Ok((traj, hi))
}

/// A fleet of `n` trajectories with lifetimes `t_len * (1 +/- jitter)`,
/// shared feature semantics and independent noise. Phase breaks scale
/// with each lifetime.
pub fn generate_fleet(
    cfg: &SynthConfig,
    n: usize,
    lifetime_jitter: f64,
) -> Result<Vec<(Trajectory, Vec<f64>)>> {
    cfg.validate()?;
    if n < 1 {
        return Err(Error::config("synth: fleet needs n >= 1".to_string()));
    }
    if !(0.0..1.0).contains(&lifetime_jitter) {
        return Err(Error::config(format!(
            "synth: lifetime_jitter must be in [0, 1), got {lifetime_jitter}"
        )));
    }
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sem = draw_semantics(cfg, &mut master);
    let (t1, t2) = cfg.phase_breaks;
    let mut fleet = Vec::with_capacity(n);
    for k in 0..n {
        let factor = if lifetime_jitter == 0.0 {
            1.0
        } else {
            1.0 + master.gen_range(-lifetime_jitter..=lifetime_jitter)
        };
        let noise_seed = master.gen::<u64>();
        let t_len = ((cfg.t_len as f64 * factor).round() as usize).max(4);
        let scale = t_len as f64 / cfg.t_len as f64;
        let t1_k = ((t1 as f64 * scale).round() as usize).clamp(1, t_len - 3);
        let t2_k = ((t2 as f64 * scale).round() as usize).clamp(t1_k + 1, t_len - 2);
        let hi = ground_truth(t_len, t1_k, t2_k);
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let y = build_features(&sem, &hi, cfg.noise_sigma, &mut rng);
        let traj = Trajectory::new(format!("synth-{}-{k}", cfg.seed), y, None)?;
        fleet.push((traj, hi));
    }
    Ok(fleet)
}
