//! Run configuration shared by every CLI command.
//!
//! A single TOML file drives the whole pipeline. Every field has a default,
//! so an absent file or empty string is a valid configuration. After the
//! file is parsed, `HIFUSE_*` environment variables are applied on top:
//!
//! * `HIFUSE_SEED` and `HIFUSE_ALIGN_WINDOW` target the two top-level keys;
//! * any other variable is `HIFUSE_<SECTION>_<KEY>`, e.g.
//!   `HIFUSE_FUSION_BETA=0.1` or `HIFUSE_TRAIN_LAMBDA_DIV=0.001`.
//!
//! Values are parsed as TOML literals (`0.1`, `true`, `[100, 150]`) and fall
//! back to plain strings, so `HIFUSE_PATHS_OUT_DIR=/tmp/run` works unquoted.
//! Unknown sections and unknown keys are rejected rather than ignored.
//!
//! The top-level `seed` is a convenience master seed: when it is given
//! explicitly (file or environment), it also fills `train.seed` and
//! `synth.seed` unless those keys are themselves set.
//!
//! Commands write the fully-resolved configuration next to their outputs so
//! a run can be reproduced from its artifacts alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::LabelSpec;
use crate::embedding::TrainConfig;
use crate::error::{Error, Result};
use crate::features::MelConfig;
use crate::fusion::FusionConfig;
use crate::synth::SynthConfig;

/// File name used by [`RunConfig::emit_resolved`].
pub const RESOLVED_CONFIG_NAME: &str = "resolved_config.toml";

/// Label windows applied to trajectories loaded from disk.
///
/// Training trajectories get `t_faulty = t_len - t_faulty_margin`, so the
/// margin is measured from the end and tolerates fleets with unequal
/// lifetimes. Test trajectories only declare the healthy prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelsConfig {
    /// Steps `t <= t_healthy` are treated as healthy (1-based).
    pub t_healthy: usize,
    /// Distance of the fault window start from the end of each trajectory.
    pub t_faulty_margin: usize,
}

impl Default for LabelsConfig {
    fn default() -> Self {
        Self {
            t_healthy: 50,
            t_faulty_margin: 50,
        }
    }
}

impl LabelsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_healthy == 0 {
            return Err(Error::config("labels: t_healthy must be >= 1".to_string()));
        }
        if self.t_faulty_margin == 0 {
            return Err(Error::config(
                "labels: t_faulty_margin must be >= 1".to_string(),
            ));
        }
        Ok(())
    }

    /// Label spec for a training trajectory of length `t_len`.
    pub fn train_spec(&self, t_len: usize) -> Result<LabelSpec> {
        let t_faulty = t_len.checked_sub(self.t_faulty_margin).unwrap_or(0);
        if t_faulty <= self.t_healthy {
            return Err(Error::config(format!(
                "labels: trajectory of {t_len} steps leaves no room between \
                 t_healthy={} and t_faulty_margin={}",
                self.t_healthy, self.t_faulty_margin
            )));
        }
        let spec = LabelSpec::new(self.t_healthy, t_faulty);
        spec.validate(t_len)?;
        Ok(spec)
    }

    /// Label spec for a test trajectory: healthy prefix only.
    pub fn test_spec(&self) -> LabelSpec {
        LabelSpec::healthy_prefix(self.t_healthy)
    }
}

/// Where commands read and write files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Directory `simulate` writes datasets into.
    pub data_dir: PathBuf,
    /// Directory every other command writes artifacts into.
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Everything a pipeline run needs, resolvable from one file plus the
/// environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; fills `train.seed` and `synth.seed` when set explicitly.
    pub seed: u64,
    /// 1-based inclusive window used by the affine alignment in `evaluate`.
    pub align_window: (usize, usize),
    pub mel: MelConfig,
    pub train: TrainConfig,
    pub fusion: FusionConfig,
    pub synth: SynthConfig,
    pub labels: LabelsConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            align_window: (100, 150),
            mel: MelConfig::default(),
            train: TrainConfig::default(),
            fusion: FusionConfig::default(),
            synth: SynthConfig::default(),
            labels: LabelsConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

const SECTIONS: [&str; 6] = ["mel", "train", "fusion", "synth", "labels", "paths"];
const TOP_LEVEL: [&str; 2] = ["seed", "align_window"];

impl RunConfig {
    /// Loads from an optional TOML file, then applies `HIFUSE_*` variables
    /// from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let vars: Vec<(String, String)> = std::env::vars().collect();
        Self::load_with(path, &vars)
    }

    /// Same as [`RunConfig::load`] but with an explicit environment, for
    /// tests and embedding.
    pub fn load_with(path: Option<&Path>, vars: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p)
                .map_err(|e| Error::io(p.display().to_string(), e))?,
            None => String::new(),
        };
        let mut tree: toml::Table = toml::from_str(&text)
            .map_err(|e| Error::config(format!("config file: {e}")))?;

        // Sorted for a deterministic application order; each variable
        // targets a distinct key so order only affects error messages.
        let mut overrides: Vec<(&String, &String)> =
            vars.iter().map(|(k, v)| (k, v)).collect();
        overrides.sort();
        for (key, raw) in overrides {
            let Some(rest) = key.strip_prefix("HIFUSE_") else {
                continue;
            };
            apply_override(&mut tree, rest, raw)?;
        }

        propagate_master_seed(&mut tree);

        let cfg: RunConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        self.train.validate()?;
        self.fusion.validate()?;
        self.synth.validate()?;
        self.labels.validate()?;
        let (lo, hi) = self.align_window;
        if lo == 0 || hi < lo {
            return Err(Error::config(format!(
                "align_window: need 1 <= lo <= hi, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    /// The full configuration as TOML, every field explicit.
    pub fn resolved_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("config serialization: {e}")))
    }

    /// Writes [`RESOLVED_CONFIG_NAME`] into `dir` (creating it) so the run
    /// is reproducible from its artifacts.
    pub fn emit_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let path = dir.join(RESOLVED_CONFIG_NAME);
        fs::write(&path, self.resolved_toml()?)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(path)
    }
}

/// Routes one `HIFUSE_*` variable (prefix stripped) into the TOML tree.
fn apply_override(tree: &mut toml::Table, rest: &str, raw: &str) -> Result<()> {
    let lower = rest.to_ascii_lowercase();
    let value = parse_toml_literal(raw);

    if TOP_LEVEL.contains(&lower.as_str()) {
        tree.insert(lower, value);
        return Ok(());
    }
    let Some((section, key)) = lower.split_once('_') else {
        return Err(Error::config(format!(
            "HIFUSE_{rest}: unknown key; top-level keys are {TOP_LEVEL:?}, \
             sections are {SECTIONS:?}"
        )));
    };
    if !SECTIONS.contains(&section) {
        return Err(Error::config(format!(
            "HIFUSE_{rest}: unknown section '{section}'; sections are {SECTIONS:?}"
        )));
    }
    let entry = tree
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let table = entry.as_table_mut().ok_or_else(|| {
        Error::config(format!("config: section '{section}' is not a table"))
    })?;
    table.insert(key.to_string(), value);
    Ok(())
}

/// Parses a TOML literal (`0.1`, `true`, `[1, 2]`), falling back to a
/// string so bare paths work.
fn parse_toml_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    if let Ok(table) = toml::from_str::<toml::Table>(&doc) {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

/// When a top-level `seed` is explicitly present, copy it into sections
/// that did not set their own.
fn propagate_master_seed(tree: &mut toml::Table) {
    let Some(seed) = tree.get("seed").cloned() else {
        return;
    };
    for section in ["train", "synth"] {
        let entry = tree
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if let Some(table) = entry.as_table_mut() {
            table.entry("seed".to_string()).or_insert_with(|| seed.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn defaults_load_from_nothing() {
        let cfg = RunConfig::load_with(None, &no_env()).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.align_window, (100, 150));
        assert_eq!(cfg.labels.t_healthy, 50);
        assert_eq!(cfg.paths.data_dir, PathBuf::from("data"));
    }

    #[test]
    fn resolved_toml_roundtrips() {
        let cfg = RunConfig::default();
        let text = cfg.resolved_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        // Emission is byte-stable.
        assert_eq!(text, cfg.resolved_toml().unwrap());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[fusion]\nbeta = 0.5\n").unwrap();
        let cfg = RunConfig::load_with(Some(&path), &no_env()).unwrap();
        assert_eq!(cfg.fusion.beta, 0.5);
        assert_eq!(cfg.fusion.iters, FusionConfig::default().iters);
        assert_eq!(cfg.train, TrainConfig::default());
    }

    #[test]
    fn unknown_file_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[fusion]\nbetta = 0.5\n").unwrap();
        let err = RunConfig::load_with(Some(&path), &no_env()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("betta"), "{err}");
    }

    #[test]
    fn env_overrides_sections_and_top_level() {
        let vars = vec![
            ("HIFUSE_FUSION_BETA".to_string(), "0.25".to_string()),
            ("HIFUSE_TRAIN_LAMBDA_DIV".to_string(), "0.01".to_string()),
            ("HIFUSE_ALIGN_WINDOW".to_string(), "[10, 20]".to_string()),
            ("HIFUSE_PATHS_OUT_DIR".to_string(), "/tmp/hifuse-x".to_string()),
            ("UNRELATED".to_string(), "ignored".to_string()),
        ];
        let cfg = RunConfig::load_with(None, &vars).unwrap();
        assert_eq!(cfg.fusion.beta, 0.25);
        assert_eq!(cfg.train.lambda_div, 0.01);
        assert_eq!(cfg.align_window, (10, 20));
        assert_eq!(cfg.paths.out_dir, PathBuf::from("/tmp/hifuse-x"));
    }

    #[test]
    fn env_overrides_beat_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[fusion]\nbeta = 0.5\n").unwrap();
        let vars = vec![("HIFUSE_FUSION_BETA".to_string(), "0.75".to_string())];
        let cfg = RunConfig::load_with(Some(&path), &vars).unwrap();
        assert_eq!(cfg.fusion.beta, 0.75);
    }

    #[test]
    fn master_seed_fills_section_seeds() {
        let vars = vec![("HIFUSE_SEED".to_string(), "9".to_string())];
        let cfg = RunConfig::load_with(None, &vars).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.synth.seed, 9);

        // Explicit section seed wins over the master seed.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 9\n[synth]\nseed = 3\n").unwrap();
        let cfg = RunConfig::load_with(Some(&path), &no_env()).unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.synth.seed, 3);

        // No explicit master seed: sections keep their own defaults.
        let cfg = RunConfig::load_with(None, &no_env()).unwrap();
        assert_eq!(cfg.train.seed, TrainConfig::default().seed);
        assert_eq!(cfg.synth.seed, SynthConfig::default().seed);
    }

    #[test]
    fn unknown_env_section_and_key_are_rejected() {
        let vars = vec![("HIFUSE_FOO_BAR".to_string(), "1".to_string())];
        let err = RunConfig::load_with(None, &vars).unwrap_err();
        assert!(err.to_string().contains("unknown section"), "{err}");

        let vars = vec![("HIFUSE_SEEDLING".to_string(), "1".to_string())];
        let err = RunConfig::load_with(None, &vars).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");

        // Typo inside a known section is caught by field validation.
        let vars = vec![("HIFUSE_FUSION_BETTA".to_string(), "1".to_string())];
        let err = RunConfig::load_with(None, &vars).unwrap_err();
        assert!(err.to_string().contains("betta"), "{err}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let vars = vec![("HIFUSE_FUSION_BETA".to_string(), "-1.0".to_string())];
        let err = RunConfig::load_with(None, &vars).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        let vars = vec![("HIFUSE_ALIGN_WINDOW".to_string(), "[20, 10]".to_string())];
        let err = RunConfig::load_with(None, &vars).unwrap_err();
        assert!(err.to_string().contains("align_window"), "{err}");
    }

    #[test]
    fn label_specs_from_config() {
        let labels = LabelsConfig::default();
        let spec = labels.train_spec(300).unwrap();
        assert_eq!(spec.t_healthy, 50);
        assert_eq!(spec.t_faulty, Some(250));
        let test = labels.test_spec();
        assert_eq!(test.t_healthy, 50);
        assert_eq!(test.t_faulty, None);
        // Too short to hold both windows.
        assert!(labels.train_spec(100).is_err());
        assert!(labels.train_spec(10).is_err());
    }

    #[test]
    fn emit_resolved_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let p1 = cfg.emit_resolved(dir.path()).unwrap();
        let first = fs::read(&p1).unwrap();
        let p2 = cfg.emit_resolved(dir.path()).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(first, fs::read(&p2).unwrap());
        // The emitted file loads back to the same config.
        let loaded = RunConfig::load_with(Some(&p1), &no_env()).unwrap();
        assert_eq!(loaded, cfg);
    }
}
