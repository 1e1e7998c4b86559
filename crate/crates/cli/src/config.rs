//! `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; an
//! empty file yields the defaults below.

use std::path::{Path, PathBuf};

use atcnn::model::ModelConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: String,
    /// Directory holding WAVs and a manifest; synthetic data is used when unset.
    pub data: Option<PathBuf>,
    /// JSON synthesis spec; the built-in ship classes are used when unset.
    pub synth_spec: Option<PathBuf>,
    pub segments_per_class: usize,
    pub train_fraction: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub histogram_bins: usize,
    pub threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profile: "desk".into(),
            data: None,
            synth_spec: None,
            segments_per_class: 20,
            train_fraction: 0.8,
            learning_rate: 0.001,
            epochs: 100,
            batch_size: 8,
            seed: 0,
            out: PathBuf::from("out"),
            histogram_bins: 0,
            threshold: 1e-4,
        }
    }
}

impl RunConfig {
    /// The selected profile with this run's hyperparameters applied.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut cfg = profile(&self.profile)?;
        cfg.hyper.learning_rate = self.learning_rate;
        cfg.hyper.epochs = self.epochs;
        cfg.hyper.batch_size = self.batch_size;
        Ok(cfg)
    }

    /// Fails if a referenced input path is missing.
    pub fn check_paths(&self) -> Result<()> {
        for p in self.data.iter().chain(&self.synth_spec) {
            if !p.exists() {
                return Err(CliError::Usage(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

pub fn profile(name: &str) -> Result<ModelConfig> {
    ModelConfig::by_name(name).ok_or_else(|| CliError::Usage(format!("unknown profile {name:?} (expected paper or desk)")))
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config_str(&text, path)
}

fn positive<T: PartialOrd + Default + Copy + std::fmt::Display>(v: T, key: &str) -> std::result::Result<T, String> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(format!("{key} must be positive, got {v}"))
    }
}

fn parse<T: std::str::FromStr>(value: &str, key: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse {value:?} for {key}"))
}

/// `origin` only labels error messages.
pub fn parse_config_str(text: &str, origin: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| CliError::Config {
            path: origin.to_path_buf(),
            line: n + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
        let applied: std::result::Result<(), String> = (|| {
            match key {
                "profile" => {
                    profile(value).map_err(|e| e.to_string())?;
                    cfg.profile = value.to_string();
                }
                "data" => cfg.data = Some(PathBuf::from(value)),
                "synth_spec" => cfg.synth_spec = Some(PathBuf::from(value)),
                "segments_per_class" => cfg.segments_per_class = positive(parse(value, key)?, key)?,
                "train_fraction" => {
                    let f: f64 = parse(value, key)?;
                    if !(f > 0.0 && f < 1.0) {
                        return Err(format!("train_fraction must be in (0, 1), got {f}"));
                    }
                    cfg.train_fraction = f;
                }
                "learning_rate" => {
                    let lr: f64 = parse(value, key)?;
                    if !lr.is_finite() {
                        return Err(format!("learning_rate must be finite, got {lr}"));
                    }
                    cfg.learning_rate = positive(lr, key)?;
                }
                "epochs" => cfg.epochs = positive(parse(value, key)?, key)?,
                "batch_size" => cfg.batch_size = positive(parse(value, key)?, key)?,
                "seed" => cfg.seed = parse(value, key)?,
                "out" => cfg.out = PathBuf::from(value),
                "histogram_bins" => {
                    let b: usize = parse(value, key)?;
                    if b == 1 {
                        return Err("histogram_bins must be 0 (off) or at least 2".into());
                    }
                    cfg.histogram_bins = b;
                }
                "threshold" => cfg.threshold = positive(parse(value, key)?, key)?,
                "optimizer" => {
                    if !value.eq_ignore_ascii_case("rmsprop") {
                        return Err(format!("only rmsprop is supported, got {value:?}"));
                    }
                }
                _ => return Err(format!("unknown key {key:?}")),
            }
            Ok(())
        })();
        applied.map_err(err)?;
    }
    Ok(cfg)
}
