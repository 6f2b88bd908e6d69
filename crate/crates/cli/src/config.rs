//! Run configuration: defaults, `key = value` config files, flag overrides
//! and the mapping onto model and training settings.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use cab_core::attention::{CabConfig, CabScalars, LagAggregation, LambdaMode, MixtureConfig, TemporalKind};
use cab_core::model::{ModelConfig, OptimizerKind, TrainConfig};
use cab_core::synthdata::Task;
use cab_core::xcorr::LagPath;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Ablation variants of the correlated heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    /// Mixture of temporal and correlated heads with learnable β (and λ when
    /// the λ rule allows it).
    #[default]
    Baseline,
    /// Correlated heads only, no lag filtering, β = 0.
    Pure,
    /// λ = β = 1/2, both frozen.
    Static,
    /// λ learnable, β frozen at 1/2.
    Lambda,
    /// β learnable, λ frozen at 1/2.
    Beta,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Self::Baseline, Self::Pure, Self::Static, Self::Lambda, Self::Beta];
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "pure" => Ok(Self::Pure),
            "static" => Ok(Self::Static),
            "lambda" => Ok(Self::Lambda),
            "beta" => Ok(Self::Beta),
            other => Err(format!("unknown ablation preset '{other}' (baseline|pure|static|lambda|beta)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Baseline => "baseline",
            Self::Pure => "pure",
            Self::Static => "static",
            Self::Lambda => "lambda",
            Self::Beta => "beta",
        })
    }
}

/// How λ is treated. `Auto` keeps it fixed below `d_k = 100` and learnable
/// from there on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaChoice {
    #[default]
    Auto,
    Fixed,
    Learnable,
}

pub const LAMBDA_LEARNABLE_FROM_DK: usize = 100;

impl FromStr for LambdaChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Self::Auto),
            "fixed" => Ok(Self::Fixed),
            "learnable" => Ok(Self::Learnable),
            other => Err(format!("unknown lambda mode '{other}' (auto|fixed|learnable)")),
        }
    }
}

impl fmt::Display for LambdaChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Auto => "auto",
            Self::Fixed => "fixed",
            Self::Learnable => "learnable",
        })
    }
}

/// `on` / `off` switch used by `--cab`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Switch(pub bool);

impl FromStr for Switch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "on" | "true" => Ok(Self(true)),
            "off" | "false" => Ok(Self(false)),
            other => Err(format!("expected on|off, got '{other}'")),
        }
    }
}

impl fmt::Display for Switch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.0 { "on" } else { "off" })
    }
}

/// Every knob of a training run. Optional fields are resolved against the
/// dataset (task) or other fields (`m`, `d_ff`, batch size).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Option<Task>,
    pub model: TemporalKind,
    pub cab: bool,
    pub ablation: Preset,
    pub h: usize,
    /// Temporal heads; `h / 2` when unset.
    pub m: Option<usize>,
    pub d_model: usize,
    pub d_k: usize,
    /// `4 · d_model` when unset.
    pub d_ff: Option<usize>,
    pub blocks: usize,
    pub positional: bool,
    pub c: usize,
    pub lag_path: LagPath,
    pub lambda: LambdaChoice,
    pub aggregation: LagAggregation,
    pub threads: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// 128 for anomaly detection and 16 otherwise when unset.
    pub batch_size: Option<usize>,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub remask: bool,
    pub anomaly_quantile: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: None,
            model: TemporalKind::SelfAttention,
            cab: true,
            ablation: Preset::Baseline,
            h: 16,
            m: None,
            d_model: 64,
            d_k: 64,
            d_ff: None,
            blocks: 2,
            positional: false,
            c: 1,
            lag_path: LagPath::Fft,
            lambda: LambdaChoice::Auto,
            aggregation: LagAggregation::Sum,
            threads: 1,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            batch_size: None,
            epochs: 30,
            patience: 10,
            seed: 0,
            remask: true,
            anomaly_quantile: 0.98,
        }
    }
}

/// Keys accepted in config files; flags use the same names with dashes.
pub const KEYS: [&str; 24] = [
    "task",
    "model",
    "cab",
    "ablation",
    "h",
    "m",
    "d_model",
    "d_k",
    "d_ff",
    "blocks",
    "positional",
    "c",
    "lag_path",
    "lambda",
    "aggregation",
    "threads",
    "lr",
    "optimizer",
    "batch_size",
    "epochs",
    "patience",
    "seed",
    "remask",
    "anomaly_quantile",
];

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value '{value}' for {key}")))
}

impl RunConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        match key {
            "task" => self.task = Some(parse(key, v)?),
            "model" => self.model = parse(key, v)?,
            "cab" => self.cab = parse::<Switch>(key, v)?.0,
            "ablation" => self.ablation = parse(key, v)?,
            "h" => self.h = parse(key, v)?,
            "m" => self.m = Some(parse(key, v)?),
            "d_model" => self.d_model = parse(key, v)?,
            "d_k" => self.d_k = parse(key, v)?,
            "d_ff" => self.d_ff = Some(parse(key, v)?),
            "blocks" => self.blocks = parse(key, v)?,
            "positional" => self.positional = parse(key, v)?,
            "c" => self.c = parse(key, v)?,
            "lag_path" => self.lag_path = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "aggregation" => self.aggregation = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "optimizer" => self.optimizer = parse(key, v)?,
            "batch_size" => self.batch_size = Some(parse(key, v)?),
            "epochs" => self.epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "remask" => self.remask = parse(key, v)?,
            "anomaly_quantile" => self.anomaly_quantile = parse(key, v)?,
            other => return Err(CliError::Usage(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key = value` config text. Blank lines and `#` comments are
    /// skipped.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected 'key = value'", i + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| CliError::Usage(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::File(format!("{}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn temporal_heads(&self) -> usize {
        match self.ablation {
            Preset::Pure => 0,
            _ if !self.cab => self.h,
            _ => self.m.unwrap_or(self.h / 2),
        }
    }

    pub fn batch_size_for(&self, task: Task) -> usize {
        self.batch_size
            .unwrap_or(if task == Task::Anomaly { 128 } else { 16 })
    }

    fn lambda_mode(&self) -> LambdaMode {
        match self.ablation {
            Preset::Pure | Preset::Static | Preset::Beta => LambdaMode::Fixed,
            Preset::Lambda => LambdaMode::Learnable,
            Preset::Baseline => match self.lambda {
                LambdaChoice::Fixed => LambdaMode::Fixed,
                LambdaChoice::Learnable => LambdaMode::Learnable,
                LambdaChoice::Auto if self.d_k < LAMBDA_LEARNABLE_FROM_DK => LambdaMode::Fixed,
                LambdaChoice::Auto => LambdaMode::Learnable,
            },
        }
    }

    /// Model configuration for a dataset of `seq_len × d_in` series.
    pub fn model_config(&self, task: Task, seq_len: usize, d_in: usize, classes: usize) -> CliResult<ModelConfig> {
        if !self.cab && self.ablation != Preset::Baseline {
            return Err(CliError::Usage(format!(
                "--ablation {} needs correlated heads, but --cab is off",
                self.ablation
            )));
        }
        let cfg = ModelConfig {
            task,
            seq_len,
            d_in,
            classes,
            blocks: self.blocks,
            d_ff: self.d_ff.unwrap_or(4 * self.d_model),
            positional: self.positional,
            mixture: MixtureConfig {
                h: self.h,
                m: self.temporal_heads(),
                d_model: self.d_model,
                d_k: self.d_k,
                temporal: self.model,
                cab: CabConfig {
                    c: self.c,
                    lag_path: self.lag_path,
                    lambda_mode: self.lambda_mode(),
                    filtering: self.ablation != Preset::Pure,
                    aggregation: self.aggregation,
                    threads: self.threads.max(1),
                    ..CabConfig::default()
                },
            },
            cab_init: CabScalars::default(),
            learn_beta: matches!(self.ablation, Preset::Baseline | Preset::Beta),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self, task: Task) -> CliResult<TrainConfig> {
        if self.epochs == 0 {
            return Err(CliError::Usage("--epochs must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(CliError::Usage(format!("--lr must be a non-negative number, got {}", self.lr)));
        }
        let batch_size = self.batch_size_for(task);
        if batch_size == 0 {
            return Err(CliError::Usage("--batch-size must be positive".into()));
        }
        Ok(TrainConfig {
            epochs: self.epochs,
            patience: self.patience,
            batch_size,
            lr: self.lr,
            optimizer: self.optimizer,
            seed: self.seed,
            remask: self.remask,
        })
    }

    /// Fully resolved settings for `task`, in `KEYS` order.
    pub fn resolved_pairs(&self, task: Task) -> Vec<(&'static str, String)> {
        KEYS.iter()
            .map(|&k| {
                let v = match k {
                    "task" => task.to_string(),
                    "model" => self.model.to_string(),
                    "cab" => Switch(self.cab).to_string(),
                    "ablation" => self.ablation.to_string(),
                    "h" => self.h.to_string(),
                    "m" => self.temporal_heads().to_string(),
                    "d_model" => self.d_model.to_string(),
                    "d_k" => self.d_k.to_string(),
                    "d_ff" => self.d_ff.unwrap_or(4 * self.d_model).to_string(),
                    "blocks" => self.blocks.to_string(),
                    "positional" => self.positional.to_string(),
                    "c" => self.c.to_string(),
                    "lag_path" => self.lag_path.to_string(),
                    "lambda" => self.lambda_mode().to_string(),
                    "aggregation" => self.aggregation.to_string(),
                    "threads" => self.threads.to_string(),
                    "lr" => self.lr.to_string(),
                    "optimizer" => self.optimizer.to_string(),
                    "batch_size" => self.batch_size_for(task).to_string(),
                    "epochs" => self.epochs.to_string(),
                    "patience" => self.patience.to_string(),
                    "seed" => self.seed.to_string(),
                    "remask" => self.remask.to_string(),
                    "anomaly_quantile" => self.anomaly_quantile.to_string(),
                    _ => unreachable!("every key is listed"),
                };
                (k, v)
            })
            .collect()
    }

    /// SHA-256 of the resolved settings, hex encoded.
    pub fn hash(&self, task: Task) -> String {
        hash_pairs(self.resolved_pairs(task).iter().map(|(k, v)| (*k, v.as_str())))
    }

    pub fn run_id(&self, task: Task) -> String {
        format!("{}-{}", self.ablation, &self.hash(task)[..12])
    }
}

pub fn hash_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut hasher = Sha256::new();
    for (k, v) in pairs {
        hasher.update(k.as_bytes());
        hasher.update(b"=");
        hasher.update(v.as_bytes());
        hasher.update(b"\n");
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
