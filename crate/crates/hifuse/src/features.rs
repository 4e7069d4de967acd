//! Log-mel feature extraction for raw vibration/acoustic channels.
//!
//! Conventions: periodic Hann window, one-sided power spectrum, triangular
//! mel filters with unit peak spanning 0 Hz to Nyquist on the HTK mel scale
//! `mel = 2595 * log10(1 + hz/700)`, and natural-log compression with floor
//! `EPS_MEL`. Unit-peak triangles make adjacent filters sum to one between
//! their centers, so the filterbank never amplifies spectral energy. All
//! summations run in a fixed order per frame: outputs are bit-reproducible.

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor inside the log compression: `ln(EPS_MEL + energy)`.
pub const EPS_MEL: f64 = 1e-10;

/// Short-time mel spectrogram parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub n_mels: usize,
    pub window_s: f64,
    pub hop_s: f64,
    pub sample_rate_hz: u32,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 64,
            window_s: 0.1,
            hop_s: 0.1,
            sample_rate_hz: 50_000,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels < 1 {
            return Err(Error::config("mel: n_mels must be >= 1".to_string()));
        }
        if !(self.hop_s > 0.0) || !self.hop_s.is_finite() {
            return Err(Error::config("mel: hop_s must be positive".to_string()));
        }
        if !(self.window_s >= self.hop_s) || !self.window_s.is_finite() {
            return Err(Error::config("mel: require 0 < hop_s <= window_s".to_string()));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::config("mel: sample_rate_hz must be positive".to_string()));
        }
        if self.window_len() < 2 * self.n_mels {
            return Err(Error::config(format!(
                "mel: window of {} samples too short for {} mel bands (need >= {})",
                self.window_len(),
                self.n_mels,
                2 * self.n_mels
            )));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        (self.window_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_s * self.sample_rate_hz as f64).round().max(1.0) as usize
    }
}

/// Center frequencies (Hz) of the mel bands.
pub fn mel_band_centers(cfg: &MelConfig) -> Vec<f64> {
    let pts = mel_points(cfg);
    pts[1..=cfg.n_mels].to_vec()
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_mels + 2` filter breakpoints in Hz, equally spaced on the mel scale
/// from 0 to Nyquist.
fn mel_points(cfg: &MelConfig) -> Vec<f64> {
    let nyquist = cfg.sample_rate_hz as f64 / 2.0;
    let m_hi = hz_to_mel(nyquist);
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(m_hi * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Triangular filterbank, `n_mels` rows by `window/2 + 1` spectrum bins.
fn filterbank(cfg: &MelConfig) -> Array2<f64> {
    let win = cfg.window_len();
    let n_bins = win / 2 + 1;
    let bin_hz = cfg.sample_rate_hz as f64 / win as f64;
    let pts = mel_points(cfg);
    let mut fb = Array2::<f64>::zeros((cfg.n_mels, n_bins));
    for k in 0..cfg.n_mels {
        let (lo, mid, hi) = (pts[k], pts[k + 1], pts[k + 2]);
        for b in 0..n_bins {
            let f = b as f64 * bin_hz;
            let rise = (f - lo) / (mid - lo);
            let fall = (hi - f) / (hi - mid);
            let w = rise.min(fall).max(0.0);
            fb[[k, b]] = w;
        }
    }
    fb
}

/// Log-mel energies, one row per frame.
///
/// Frame count is `floor((len - window)/hop) + 1`; each entry is
/// `ln(EPS_MEL + filterbank energy)` of the Hann-windowed one-sided power
/// spectrum.
pub fn mel_spectrogram(signal: &[f64], cfg: &MelConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let win = cfg.window_len();
    let hop = cfg.hop_len();
    if signal.len() < win {
        return Err(Error::data(format!(
            "mel: signal of {} samples shorter than one {} sample window",
            signal.len(),
            win
        )));
    }
    let n_frames = (signal.len() - win) / hop + 1;
    let n_bins = win / 2 + 1;
    let fb = filterbank(cfg);

    let hann: Vec<f64> = (0..win)
        .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / win as f64).cos())
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(win);
    let mut buf = vec![Complex::new(0.0, 0.0); win];
    let mut power = vec![0.0f64; n_bins];

    let mut out = Array2::<f64>::zeros((n_frames, cfg.n_mels));
    for frame in 0..n_frames {
        let start = frame * hop;
        for n in 0..win {
            buf[n] = Complex::new(signal[start + n] * hann[n], 0.0);
        }
        fft.process(&mut buf);
        for (b, p) in power.iter_mut().enumerate() {
            *p = buf[b].norm_sqr();
        }
        for k in 0..cfg.n_mels {
            let mut e = 0.0;
            for b in 0..n_bins {
                e += fb[[k, b]] * power[b];
            }
            out[[frame, k]] = (EPS_MEL + e).ln();
        }
    }
    Ok(out)
}

/// Concatenates per-channel frame matrices along the feature dimension.
pub fn fuse_channels(per_channel: &[Array2<f64>]) -> Result<Array2<f64>> {
    if per_channel.is_empty() {
        return Err(Error::data("fuse_channels: no channels given".to_string()));
    }
    let n_frames = per_channel[0].nrows();
    for (c, m) in per_channel.iter().enumerate() {
        if m.nrows() != n_frames {
            return Err(Error::data(format!(
                "fuse_channels: channel {c} has {} frames, channel 0 has {n_frames}",
                m.nrows()
            )));
        }
    }
    let total_cols: usize = per_channel.iter().map(|m| m.ncols()).sum();
    let mut out = Array2::<f64>::zeros((n_frames, total_cols));
    let mut col = 0;
    for m in per_channel {
        out.slice_mut(ndarray::s![.., col..col + m.ncols()])
            .assign(m);
        col += m.ncols();
    }
    Ok(out)
}

/// Averages frames over operating-pass boundaries: one output row per range.
///
/// Ranges must be non-empty, non-overlapping, in order, and within bounds.
pub fn aggregate_pass(
    frames: &ArrayView2<f64>,
    boundaries: &[std::ops::Range<usize>],
) -> Result<Array2<f64>> {
    if boundaries.is_empty() {
        return Err(Error::data("aggregate_pass: no ranges given".to_string()));
    }
    let mut prev_end = 0usize;
    for (i, r) in boundaries.iter().enumerate() {
        if r.start >= r.end {
            return Err(Error::data(format!(
                "aggregate_pass: range {i} ({}..{}) is empty",
                r.start, r.end
            )));
        }
        if r.start < prev_end {
            return Err(Error::data(format!(
                "aggregate_pass: range {i} ({}..{}) overlaps or is out of order",
                r.start, r.end
            )));
        }
        if r.end > frames.nrows() {
            return Err(Error::data(format!(
                "aggregate_pass: range {i} ({}..{}) exceeds {} frames",
                r.start,
                r.end,
                frames.nrows()
            )));
        }
        prev_end = r.end;
    }
    let mut out = Array2::<f64>::zeros((boundaries.len(), frames.ncols()));
    for (i, r) in boundaries.iter().enumerate() {
        let n = (r.end - r.start) as f64;
        for j in 0..frames.ncols() {
            let mut s = 0.0;
            for t in r.clone() {
                s += frames[[t, j]];
            }
            out[[i, j]] = s / n;
        }
    }
    Ok(out)
}
