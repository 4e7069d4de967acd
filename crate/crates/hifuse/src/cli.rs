//! Command-line pipeline.
//!
//! Commands compose into a reproducible workflow:
//!
//! ```text
//! simulate -> train -> fuse -> evaluate          (synthetic self-check)
//! extract  -> train -> fuse -> evaluate          (raw signal data)
//! sweep                                          (hyperparameter grid)
//! ```
//!
//! Every command resolves one [`RunConfig`] (TOML file plus `HIFUSE_*`
//! environment overrides) and writes the resolved copy next to its outputs,
//! so re-running with the same inputs reproduces the artifacts byte for
//! byte. None of the artifacts embed timestamps or machine state.

use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{load_raw_signal, load_trajectory, DatasetSplit, TrajectoryFormat};
use crate::embedding::{self, EmbeddingModel};
use crate::error::{Error, Result};
use crate::features::{fuse_channels, mel_spectrogram, MelConfig};
use crate::fusion::{self, FusionState, IdealSpaceSpec};
use crate::metrics::{self, DelayOutcome, MetricsReport, TrajectoryMetrics};
use crate::synth::generate_fleet;
use crate::{HealthIndex, Provenance};

#[derive(Debug, Parser)]
#[command(
    name = "hifuse",
    version,
    about = "Health index estimation from run-to-failure sensor data"
)]
pub struct Cli {
    /// Run configuration TOML; HIFUSE_* environment variables override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic run-to-failure fleet with ground-truth health.
    Simulate {
        /// Number of trajectories.
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// Relative lifetime jitter in [0, 1); 0 keeps all lifetimes equal.
        #[arg(long, default_value_t = 0.1)]
        jitter: f64,
    },
    /// Turn raw signal channels into one feature CSV of log-mel energies.
    Extract {
        /// Raw-signal files, one per channel (header `sample_rate_hz=<int>`,
        /// one sample per line). All channels must share a sample rate.
        #[arg(required = true)]
        channels: Vec<PathBuf>,
        /// Output feature CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the embedding network on a fleet of feature CSVs.
    Train {
        /// Run-to-failure training trajectories.
        #[arg(required = true)]
        train: Vec<PathBuf>,
        /// Test trajectory; only its healthy prefix joins training.
        #[arg(long)]
        test: PathBuf,
        /// Where to write the model (default: <out_dir>/model.json).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Override the diversity weight from the config.
        #[arg(long)]
        lambda_div: Option<f64>,
        /// Override the unlabeled-term weight from the config.
        #[arg(long)]
        mu: Option<f64>,
        /// Override the weight-decay strength from the config.
        #[arg(long)]
        nu: Option<f64>,
        /// Override the embedding width from the config.
        #[arg(long)]
        k: Option<usize>,
        /// Override the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate health indices with a trained model.
    Fuse {
        /// Training trajectories; required by the fused methods, scored
        /// individually by the anomaly-score methods.
        train: Vec<PathBuf>,
        /// Test trajectory.
        #[arg(long)]
        test: PathBuf,
        /// Trained model path (default: <out_dir>/model.json).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Estimation method.
        #[arg(long, value_enum)]
        method: Method,
        /// Streaming solve. Implied by rads/ra2ds; rejected elsewhere.
        #[arg(long)]
        realtime: bool,
        /// Solve step for the streaming methods; overrides fusion.tau.
        #[arg(long)]
        tau: Option<usize>,
    },
    /// Score health-index CSVs, optionally against ground truth.
    Evaluate {
        /// Health-index CSVs produced by `fuse` (header `t,raw,hi`).
        #[arg(required = true)]
        his: Vec<PathBuf>,
        /// Ground-truth CSVs (header `t,hi`), one per index file, in order.
        #[arg(long)]
        truth: Vec<PathBuf>,
        /// 1-based fault onset; enables detection delay and ramp error.
        #[arg(long)]
        onset: Option<usize>,
    },
    /// Grid sweep over fusion and embedding hyperparameters on a synthetic
    /// fleet (three units, equal lifetimes, last one held out).
    Sweep {
        /// Ridge weights to try.
        #[arg(long, value_delimiter = ',', default_value = "0.05")]
        betas: Vec<f64>,
        /// Embedding widths to try.
        #[arg(long, value_delimiter = ',', default_value = "16")]
        ks: Vec<usize>,
        /// Diversity weights to try.
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.001")]
        lambdas: Vec<f64>,
        /// Drop the monotonicity step inside the projection (ablation);
        /// the prefix/suffix clamps still apply.
        #[arg(long)]
        no_isotonic: bool,
    },
}

/// Health-index estimation methods.
///
/// The first letter block picks the embedding (`2ds` variants need a model
/// trained with a positive diversity weight, the others need a plain one);
/// the presence of `a`/`ra` picks anomaly score vs offline vs streaming
/// fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Anomaly score from a plain embedding; no fusion.
    Deepsad,
    /// Offline fusion over a plain embedding.
    Ads,
    /// Streaming fusion over a plain embedding.
    Rads,
    /// Anomaly score from a diversity-regularized embedding; no fusion.
    #[value(name = "2ds")]
    TwoDs,
    /// Offline fusion over a diversity-regularized embedding.
    A2ds,
    /// Streaming fusion over a diversity-regularized embedding.
    Ra2ds,
}

impl Method {
    pub fn cli_name(self) -> &'static str {
        match self {
            Method::Deepsad => "deepsad",
            Method::Ads => "ads",
            Method::Rads => "rads",
            Method::TwoDs => "2ds",
            Method::A2ds => "a2ds",
            Method::Ra2ds => "ra2ds",
        }
    }

    /// False for the two anomaly-score methods.
    pub fn uses_fusion(self) -> bool {
        !matches!(self, Method::Deepsad | Method::TwoDs)
    }

    pub fn is_realtime(self) -> bool {
        matches!(self, Method::Rads | Method::Ra2ds)
    }

    /// Whether the model must have been trained with `lambda_div > 0`.
    pub fn needs_diversity(self) -> bool {
        matches!(self, Method::TwoDs | Method::A2ds | Method::Ra2ds)
    }
}

/// Entry point used by the binary.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate { n, jitter } => cmd_simulate(&cfg, n, jitter),
        Command::Extract { channels, out } => cmd_extract(&cfg, &channels, &out),
        Command::Train {
            train,
            test,
            model,
            lambda_div,
            mu,
            nu,
            k,
            seed,
        } => {
            let overrides = TrainOverrides {
                lambda_div,
                mu,
                nu,
                k,
                seed,
            };
            cmd_train(&cfg, &train, &test, model.as_deref(), &overrides)
        }
        Command::Fuse {
            train,
            test,
            model,
            method,
            realtime,
            tau,
        } => cmd_fuse(&cfg, &train, &test, model.as_deref(), method, realtime, tau),
        Command::Evaluate { his, truth, onset } => cmd_evaluate(&cfg, &his, &truth, onset),
        Command::Sweep {
            betas,
            ks,
            lambdas,
            no_isotonic,
        } => cmd_sweep(&cfg, &betas, &ks, &lambdas, no_isotonic),
    }
}

/// Flag-level overrides for `train`.
#[derive(Debug, Default, Clone, Copy)]
pub struct TrainOverrides {
    pub lambda_div: Option<f64>,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
}

pub fn cmd_simulate(cfg: &RunConfig, n: usize, jitter: f64) -> Result<()> {
    let fleet = generate_fleet(&cfg.synth, n, jitter)?;
    let dir = &cfg.paths.data_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for (traj, truth) in &fleet {
        let features = dir.join(format!("{}.csv", traj.id()));
        write_feature_csv(&features, &traj.features().view())?;
        write_truth_csv(&dir.join(format!("{}_truth.csv", traj.id())), truth)?;
        println!("wrote {} ({} steps)", features.display(), traj.t_len());
    }
    cfg.emit_resolved(dir)?;
    Ok(())
}

pub fn cmd_extract(cfg: &RunConfig, channels: &[PathBuf], out: &Path) -> Result<()> {
    let mut mats: Vec<Array2<f64>> = Vec::with_capacity(channels.len());
    let mut rate: Option<u32> = None;
    for path in channels {
        let (samples, r) = load_raw_signal(path)?;
        if let Some(prev) = rate {
            if prev != r {
                return Err(Error::data(format!(
                    "{}: sample rate {r} Hz differs from {prev} Hz of earlier channels",
                    path.display()
                )));
            }
        }
        rate = Some(r);
        // The file's declared rate wins over the config so window/hop
        // lengths match the actual data.
        let mel = MelConfig {
            sample_rate_hz: r,
            ..cfg.mel
        };
        mel.validate()?;
        mats.push(mel_spectrogram(&samples, &mel)?);
    }
    let fused = fuse_channels(&mats)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    write_feature_csv(out, &fused.view())?;
    println!(
        "wrote {} ({} frames, {} features)",
        out.display(),
        fused.nrows(),
        fused.ncols()
    );
    cfg.emit_resolved(&cfg.paths.out_dir)?;
    Ok(())
}

pub fn cmd_train(
    cfg: &RunConfig,
    train_paths: &[PathBuf],
    test_path: &Path,
    model_out: Option<&Path>,
    overrides: &TrainOverrides,
) -> Result<()> {
    let mut tcfg = cfg.train.clone();
    if let Some(v) = overrides.lambda_div {
        tcfg.lambda_div = v;
    }
    if let Some(v) = overrides.mu {
        tcfg.mu = v;
    }
    if let Some(v) = overrides.nu {
        tcfg.nu = v;
    }
    if let Some(v) = overrides.k {
        tcfg.k = v;
    }
    if let Some(v) = overrides.seed {
        tcfg.seed = v;
    }
    tcfg.validate()?;

    let mut train_pairs = Vec::with_capacity(train_paths.len());
    for p in train_paths {
        let traj = load_trajectory(p, TrajectoryFormat::FeatureCsv)?;
        let spec = cfg.labels.train_spec(traj.t_len())?;
        train_pairs.push((traj, spec));
    }
    let test_traj = load_trajectory(test_path, TrajectoryFormat::FeatureCsv)?;
    let split = DatasetSplit::new(train_pairs, (test_traj, cfg.labels.test_spec()))?;

    let model = embedding::train(&split, &tcfg)?;

    let out_dir = &cfg.paths.out_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let model_path = model_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("model.json"));
    if let Some(parent) = model_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    model.save(&model_path)?;
    write_loss_trace(&out_dir.join("loss_trace.csv"), &model.loss_trace)?;

    let mut resolved = cfg.clone();
    resolved.train = tcfg;
    resolved.emit_resolved(out_dir)?;
    println!(
        "wrote {} (K={}, {} epochs)",
        model_path.display(),
        model.k(),
        model.train_config.epochs
    );
    Ok(())
}

pub fn cmd_fuse(
    cfg: &RunConfig,
    train_paths: &[PathBuf],
    test_path: &Path,
    model_path: Option<&Path>,
    method: Method,
    realtime_flag: bool,
    tau: Option<usize>,
) -> Result<()> {
    if realtime_flag && !method.is_realtime() {
        return Err(Error::config(format!(
            "--realtime does not apply to '{}'; use rads or ra2ds",
            method.cli_name()
        )));
    }
    if tau.is_some() && !method.is_realtime() {
        return Err(Error::config(format!(
            "--tau does not apply to '{}'; use rads or ra2ds",
            method.cli_name()
        )));
    }

    let model_path = model_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.paths.out_dir.join("model.json"));
    let model = EmbeddingModel::load(&model_path)?;
    let lambda = model.train_config.lambda_div;
    if method.needs_diversity() && lambda == 0.0 {
        return Err(Error::config(format!(
            "'{}' expects a diversity-regularized model, but {} was trained \
             with lambda_div = 0; retrain with --lambda-div > 0 or use \
             deepsad/ads/rads",
            method.cli_name(),
            model_path.display()
        )));
    }
    if !method.needs_diversity() && lambda > 0.0 {
        return Err(Error::config(format!(
            "'{}' expects a plain model, but {} was trained with lambda_div \
             = {lambda}; use 2ds/a2ds/ra2ds or retrain with --lambda-div 0",
            method.cli_name(),
            model_path.display()
        )));
    }

    let out_dir = &cfg.paths.out_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let test_traj = load_trajectory(test_path, TrajectoryFormat::FeatureCsv)?;

    if !method.uses_fusion() {
        // Anomaly-score methods treat every given trajectory independently.
        for path in train_paths.iter().chain(std::iter::once(&test_path.to_path_buf())) {
            let traj = if path.as_path() == test_path {
                test_traj.clone()
            } else {
                load_trajectory(path, TrajectoryFormat::FeatureCsv)?
            };
            let hi = model.anomaly_score(&traj)?;
            let out = out_dir.join(format!("hi_{}.csv", traj.id()));
            write_hi_csv(&out, &hi)?;
            println!("wrote {}", out.display());
        }
        cfg.emit_resolved(out_dir)?;
        return Ok(());
    }

    if train_paths.is_empty() {
        return Err(Error::config(format!(
            "'{}' fuses a fleet; give at least one training trajectory",
            method.cli_name()
        )));
    }

    let mut train_trajs = Vec::with_capacity(train_paths.len());
    for p in train_paths {
        train_trajs.push(load_trajectory(p, TrajectoryFormat::FeatureCsv)?);
    }
    let mut train_embeds = Vec::with_capacity(train_trajs.len());
    let mut train_specs = Vec::with_capacity(train_trajs.len());
    for traj in &train_trajs {
        train_embeds.push(model.embed(traj)?);
        train_specs.push(IdealSpaceSpec::from(cfg.labels.train_spec(traj.t_len())?));
    }
    let test_y = model.embed(&test_traj)?;
    let test_spec = IdealSpaceSpec::healthy_prefix(cfg.labels.t_healthy);

    let pairs: Vec<(ArrayView2<f64>, IdealSpaceSpec)> = train_embeds
        .iter()
        .zip(&train_specs)
        .map(|(y, s)| (y.view(), *s))
        .collect();

    let mut fcfg = cfg.fusion;
    if let Some(t) = tau {
        fcfg.tau = t;
    }
    fcfg.validate()?;

    let (test_hi, state, solve_points) = if method.is_realtime() {
        let out = fusion::fit_realtime(&pairs, test_y.view(), &test_spec, &fcfg)?;
        (out.hi, out.final_state, Some(out.solve_points))
    } else {
        let out = fusion::fit(&pairs, (test_y.view(), test_spec), &fcfg)?;
        (out.test_hi, out.state, None)
    };

    let test_out = out_dir.join(format!("hi_{}.csv", test_traj.id()));
    write_hi_csv(&test_out, &test_hi)?;
    println!("wrote {}", test_out.display());
    // `fit` keeps trajectory order: train trajectories first, test last.
    for (i, traj) in train_trajs.iter().enumerate() {
        let hi = HealthIndex {
            values: state.z_per_traj[i].clone(),
            raw: state.raw(&train_embeds[i].view()),
            provenance: Provenance::Offline,
        };
        let out = out_dir.join(format!("hi_{}.csv", traj.id()));
        write_hi_csv(&out, &hi)?;
        println!("wrote {}", out.display());
    }

    write_fusion_diagnostics(
        &out_dir.join("fusion.json"),
        method,
        method.is_realtime().then_some(fcfg.tau),
        solve_points.as_deref(),
        &state,
    )?;

    let mut resolved = cfg.clone();
    resolved.fusion = fcfg;
    resolved.emit_resolved(out_dir)?;
    Ok(())
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    hi_paths: &[PathBuf],
    truth_paths: &[PathBuf],
    onset: Option<usize>,
) -> Result<()> {
    if !truth_paths.is_empty() && truth_paths.len() != hi_paths.len() {
        return Err(Error::config(format!(
            "got {} --truth files for {} health-index files; counts must match",
            truth_paths.len(),
            hi_paths.len()
        )));
    }
    let mut ids = Vec::with_capacity(hi_paths.len());
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(hi_paths.len());
    for p in hi_paths {
        let (id, _raw, vals) = read_hi_csv(p)?;
        ids.push(id);
        values.push(vals);
    }
    let truths: Option<Vec<Vec<f64>>> = if truth_paths.is_empty() {
        None
    } else {
        let mut ts = Vec::with_capacity(truth_paths.len());
        for (p, vals) in truth_paths.iter().zip(&values) {
            let t = read_truth_csv(p)?;
            if t.len() != vals.len() {
                return Err(Error::data(format!(
                    "{}: {} truth steps for a {}-step health index",
                    p.display(),
                    t.len(),
                    vals.len()
                )));
            }
            ts.push(t);
        }
        Some(ts)
    };

    let report = build_report(&ids, &values, truths.as_deref(), onset, cfg.align_window)?;

    let out_dir = &cfg.paths.out_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let json_path = out_dir.join("metrics.json");
    fs::write(&json_path, report.to_json_pretty())
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    let csv_path = out_dir.join("metrics.csv");
    let file = File::create(&csv_path).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    report.write_csv(BufWriter::new(file))?;
    cfg.emit_resolved(out_dir)?;
    println!(
        "wrote {} and {} (trendability {}, prognosability {})",
        json_path.display(),
        csv_path.display(),
        report.trendability,
        report.prognosability
    );
    Ok(())
}

/// Assembles the evaluation report from in-memory health indices.
///
/// Correlation is computed on the raw estimates; the adjusted RMSE on the
/// affinely aligned ones. When trajectories have unequal lengths the
/// pairwise trendability is computed on the common prefix.
pub fn build_report(
    ids: &[String],
    values: &[Vec<f64>],
    truths: Option<&[Vec<f64>]>,
    onset: Option<usize>,
    align_window: (usize, usize),
) -> Result<MetricsReport> {
    if ids.len() != values.len() {
        return Err(Error::data(format!(
            "build_report: {} ids for {} trajectories",
            ids.len(),
            values.len()
        )));
    }
    if values.is_empty() {
        return Err(Error::data("build_report: no trajectories".to_string()));
    }

    let min_len = values.iter().map(Vec::len).min().unwrap_or(0);
    let equal_lengths = values.iter().all(|v| v.len() == min_len);
    let trendability = if equal_lengths {
        metrics::trendability(values)?
    } else {
        let prefixes: Vec<Vec<f64>> = values.iter().map(|v| v[..min_len].to_vec()).collect();
        metrics::trendability(&prefixes)?
    };
    let prognosability = metrics::prognosability(values)?;

    let aligned = match truths {
        Some(ts) => Some(metrics::affine_align(values, ts, align_window)?.0),
        None => None,
    };

    let mut per_trajectory = Vec::with_capacity(values.len());
    for (i, id) in ids.iter().enumerate() {
        let correlation = match truths {
            Some(ts) => Some(metrics::correlation(&values[i], &ts[i])?),
            None => None,
        };
        let adjusted_rmse = match (&aligned, truths) {
            (Some(al), Some(ts)) => Some(metrics::adjusted_rmse(&al[i], &ts[i])?),
            _ => None,
        };
        let (delay, rsse) = match onset {
            Some(o) => {
                let d = match metrics::delay(&values[i], o, 1.0) {
                    Some(v) => DelayOutcome::Alarm(v),
                    None => DelayOutcome::NoAlarm,
                };
                let ramp = metrics::ramp_truth(values[i].len(), o)?;
                (Some(d), Some(metrics::rsse(&values[i], &ramp)?))
            }
            None => (None, None),
        };
        per_trajectory.push(TrajectoryMetrics {
            id: id.clone(),
            correlation,
            adjusted_rmse,
            mk_monotonicity: metrics::mk_monotonicity(&values[i])?,
            delay,
            rsse,
        });
    }
    Ok(MetricsReport {
        per_trajectory,
        trendability,
        prognosability,
    })
}

/// One grid point of `sweep`.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub k: usize,
    pub lambda: f64,
    pub isotonic: bool,
    pub correlation: f64,
    pub adjusted_rmse: f64,
    pub mk_monotonicity: f64,
    pub trendability: f64,
    pub prognosability: f64,
}

pub fn cmd_sweep(
    cfg: &RunConfig,
    betas: &[f64],
    ks: &[usize],
    lambdas: &[f64],
    no_isotonic: bool,
) -> Result<()> {
    if betas.is_empty() || ks.is_empty() || lambdas.is_empty() {
        return Err(Error::config(
            "sweep: --betas, --ks and --lambdas must each be non-empty".to_string(),
        ));
    }
    let mut grid = Vec::new();
    for &b in betas {
        for &k in ks {
            for &l in lambdas {
                grid.push((b, k, l));
            }
        }
    }
    // Grid points are independent; collect keeps the row order stable no
    // matter how the pool schedules them.
    let rows: Vec<SweepRow> = grid
        .par_iter()
        .map(|&(beta, k, lambda)| sweep_point(cfg, beta, k, lambda, !no_isotonic))
        .collect::<Result<Vec<_>>>()?;

    let out_dir = &cfg.paths.out_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let path = out_dir.join("sweep.csv");
    let mut w = BufWriter::new(
        File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    writeln!(
        w,
        "beta,k,lambda,isotonic,correlation,adjusted_rmse,mk_monotonicity,trendability,prognosability"
    )
    .map_err(|e| Error::io(path.display().to_string(), e))?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.beta,
            r.k,
            r.lambda,
            r.isotonic,
            r.correlation,
            r.adjusted_rmse,
            r.mk_monotonicity,
            r.trendability,
            r.prognosability
        )
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    cfg.emit_resolved(out_dir)?;
    println!("wrote {} ({} grid points)", path.display(), rows.len());
    Ok(())
}

/// Simulate/train/fuse/evaluate one hyperparameter combination in memory.
fn sweep_point(
    cfg: &RunConfig,
    beta: f64,
    k: usize,
    lambda: f64,
    isotonic: bool,
) -> Result<SweepRow> {
    let fleet = generate_fleet(&cfg.synth, 3, 0.0)?;
    let (test_traj, _) = fleet.last().expect("fleet of 3").clone();
    let truths: Vec<Vec<f64>> = fleet.iter().map(|(_, t)| t.clone()).collect();

    let mut train_pairs = Vec::new();
    for (traj, _) in &fleet[..fleet.len() - 1] {
        train_pairs.push((traj.clone(), cfg.labels.train_spec(traj.t_len())?));
    }
    let split = DatasetSplit::new(train_pairs, (test_traj.clone(), cfg.labels.test_spec()))?;

    let mut tcfg = cfg.train.clone();
    tcfg.k = k;
    tcfg.lambda_div = lambda;
    tcfg.validate()?;
    let model = embedding::train(&split, &tcfg)?;

    let mut embeds = Vec::with_capacity(fleet.len());
    for (traj, _) in &fleet {
        embeds.push(model.embed(traj)?);
    }
    let mut fcfg = cfg.fusion;
    fcfg.beta = beta;
    fcfg.isotonic = isotonic;
    fcfg.validate()?;

    let pairs: Vec<(ArrayView2<f64>, IdealSpaceSpec)> = embeds[..embeds.len() - 1]
        .iter()
        .zip(&fleet[..fleet.len() - 1])
        .map(|(y, (traj, _))| {
            Ok((
                y.view(),
                IdealSpaceSpec::from(cfg.labels.train_spec(traj.t_len())?),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let test_spec = IdealSpaceSpec::healthy_prefix(cfg.labels.t_healthy);
    let out = fusion::fit(
        &pairs,
        (embeds.last().expect("test embed").view(), test_spec),
        &fcfg,
    )?;

    // z order matches the fit input order: train trajectories, then test.
    let fused: Vec<Vec<f64>> = out.state.z_per_traj.clone();
    let test_idx = fused.len() - 1;
    let (aligned, _) = metrics::affine_align(&fused, &truths, cfg.align_window)?;
    Ok(SweepRow {
        beta,
        k,
        lambda,
        isotonic,
        correlation: metrics::correlation(&fused[test_idx], &truths[test_idx])?,
        adjusted_rmse: metrics::adjusted_rmse(&aligned[test_idx], &truths[test_idx])?,
        mk_monotonicity: metrics::mk_monotonicity(&fused[test_idx])?,
        trendability: metrics::trendability(&fused)?,
        prognosability: metrics::prognosability(&fused)?,
    })
}

// --- CSV artifacts -------------------------------------------------------
//
// All files are plain comma-separated text with a header row and a trailing
// newline. Floats are printed with the shortest representation that parses
// back to the same value, which keeps artifacts byte-stable across runs.

/// Header `t,f0,...`; `t` is the 1-based step index.
pub fn write_feature_csv(path: &Path, features: &ArrayView2<f64>) -> Result<()> {
    let shown = path.display().to_string();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(&shown, e))?);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..features.ncols()).map(|j| format!("f{j}")))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(&shown, e))?;
    for (i, row) in features.outer_iter().enumerate() {
        write!(w, "{}", i + 1).map_err(|e| Error::io(&shown, e))?;
        for v in row {
            write!(w, ",{v}").map_err(|e| Error::io(&shown, e))?;
        }
        writeln!(w).map_err(|e| Error::io(&shown, e))?;
    }
    w.flush().map_err(|e| Error::io(&shown, e))
}

/// Header `t,hi`.
pub fn write_truth_csv(path: &Path, values: &[f64]) -> Result<()> {
    let shown = path.display().to_string();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(&shown, e))?);
    writeln!(w, "t,hi").map_err(|e| Error::io(&shown, e))?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{},{v}", i + 1).map_err(|e| Error::io(&shown, e))?;
    }
    w.flush().map_err(|e| Error::io(&shown, e))
}

/// Header `t,raw,hi`: the pre-projection fused value and the health index.
pub fn write_hi_csv(path: &Path, hi: &HealthIndex) -> Result<()> {
    let shown = path.display().to_string();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(&shown, e))?);
    writeln!(w, "t,raw,hi").map_err(|e| Error::io(&shown, e))?;
    for (i, (r, v)) in hi.raw.iter().zip(&hi.values).enumerate() {
        writeln!(w, "{},{r},{v}", i + 1).map_err(|e| Error::io(&shown, e))?;
    }
    w.flush().map_err(|e| Error::io(&shown, e))
}

/// Header `epoch,loss`, one row per epoch (mean batch loss).
pub fn write_loss_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let shown = path.display().to_string();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(&shown, e))?);
    writeln!(w, "epoch,loss").map_err(|e| Error::io(&shown, e))?;
    for (i, v) in trace.iter().enumerate() {
        writeln!(w, "{},{v}", i + 1).map_err(|e| Error::io(&shown, e))?;
    }
    w.flush().map_err(|e| Error::io(&shown, e))
}

#[derive(Serialize)]
struct FusionDiagnostics<'a> {
    method: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solve_points: Option<&'a [usize]>,
    w: &'a [f64],
    objective_trace: &'a [f64],
}

fn write_fusion_diagnostics(
    path: &Path,
    method: Method,
    tau: Option<usize>,
    solve_points: Option<&[usize]>,
    state: &FusionState,
) -> Result<()> {
    let diag = FusionDiagnostics {
        method: method.cli_name(),
        tau,
        solve_points,
        w: &state.w,
        objective_trace: &state.objective_trace,
    };
    let text = serde_json::to_string_pretty(&diag).expect("diagnostics serialize") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a `t,raw,hi` file; the id is the stem minus any `hi_` prefix.
pub fn read_hi_csv(path: &Path) -> Result<(String, Vec<f64>, Vec<f64>)> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&shown, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "t,raw,hi" => {}
        Some(h) => {
            return Err(Error::MalformedHeader {
                path: shown,
                detail: format!("expected 't,raw,hi', got '{h}'"),
            })
        }
        None => return Err(Error::EmptyFile { path: shown }),
    }
    let mut raw = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::data(format!(
                "{shown}: line {}: expected 3 columns, got {}",
                lineno + 2,
                cols.len()
            )));
        }
        raw.push(parse_cell(&shown, lineno + 2, cols[1])?);
        values.push(parse_cell(&shown, lineno + 2, cols[2])?);
    }
    if values.is_empty() {
        return Err(Error::data(format!("{shown}: no data rows")));
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| shown.clone());
    let id = stem.strip_prefix("hi_").unwrap_or(&stem).to_string();
    Ok((id, raw, values))
}

/// Reads a `t,hi` ground-truth file.
pub fn read_truth_csv(path: &Path) -> Result<Vec<f64>> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&shown, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "t,hi" => {}
        Some(h) => {
            return Err(Error::MalformedHeader {
                path: shown,
                detail: format!("expected 't,hi', got '{h}'"),
            })
        }
        None => return Err(Error::EmptyFile { path: shown }),
    }
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 2 {
            return Err(Error::data(format!(
                "{shown}: line {}: expected 2 columns, got {}",
                lineno + 2,
                cols.len()
            )));
        }
        values.push(parse_cell(&shown, lineno + 2, cols[1])?);
    }
    if values.is_empty() {
        return Err(Error::data(format!("{shown}: no data rows")));
    }
    Ok(values)
}

fn parse_cell(path: &str, lineno: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            Error::data(format!(
                "{path}: line {lineno}: '{s}' is not a finite number"
            ))
        })
}
