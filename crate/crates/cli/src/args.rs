use std::path::PathBuf;

use cab_core::attention::{LagAggregation, TemporalKind};
use cab_core::model::OptimizerKind;
use cab_core::synthdata::{PlantedLag, Task};
use cab_core::xcorr::LagPath;
use clap::{Args, Parser, Subcommand};

use crate::config::{LambdaChoice, Preset, Switch};

pub const OUT_DIR_ENV: &str = "CAB_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "cab", version, about = "Correlated attention experiments on synthetic multivariate series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as `<out>.train`, `<out>.val` and `<out>.test`.
    GenData(GenDataArgs),
    /// Train a model, write a checkpoint and stream metrics records.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Time the direct and FFT lag paths and print a CSV table.
    Bench(BenchArgs),
    /// Train the baseline and every ablation preset and print a comparison table.
    Ablate(TrainArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutDir {
    /// Directory that relative paths are resolved against.
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    pub out_dir: PathBuf,
}

impl OutDir {
    pub fn resolve(&self, path: &std::path::Path) -> PathBuf {
        self.out_dir.join(path)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub task: Task,
    /// Series length [default: 96, or 100 for anomaly]
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.25)]
    pub mask_ratio: f64,
    /// Planted couplings `source:target:lag@weight`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lags: Vec<PlantedLag>,
    /// Noise standard deviation relative to each clean feature.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.8)]
    pub ar_coef: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sin_amp: f64,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Anomalous steps per sample.
    #[arg(long, default_value_t = 2)]
    pub anomalies: usize,
    /// Spike size in feature standard deviations.
    #[arg(long, default_value_t = 6.0)]
    pub anomaly_magnitude: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.2,0.2")]
    pub splits: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset name; files are written as `<out>.<split>`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub dir: OutDir,
}

/// Settings that can also come from a config file. Flags win.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub task: Option<Task>,
    /// Temporal attention of the base model.
    #[arg(long, value_name = "transformer|nonstationary")]
    pub model: Option<TemporalKind>,
    /// Use correlated heads; `off` makes every head temporal.
    #[arg(long, value_name = "on|off")]
    pub cab: Option<Switch>,
    #[arg(long, value_name = "baseline|pure|static|lambda|beta")]
    pub ablation: Option<Preset>,
    #[arg(long)]
    pub h: Option<usize>,
    /// Temporal heads out of `h`.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_k: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub positional: Option<bool>,
    /// Lag count multiplier in `k = c * ceil(ln T)`.
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long, value_name = "fft|naive")]
    pub lag_path: Option<LagPath>,
    #[arg(long, value_name = "auto|fixed|learnable")]
    pub lambda: Option<LambdaChoice>,
    #[arg(long, value_name = "sum|mean")]
    pub aggregation: Option<LagAggregation>,
    /// Worker threads for the FFT lag path.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_name = "adam|sgd")]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Redraw imputation masks every epoch.
    #[arg(long)]
    pub remask: Option<bool>,
    /// Validation-error quantile used as the anomaly threshold.
    #[arg(long)]
    pub anomaly_quantile: Option<f64>,
}

macro_rules! pairs {
    ($src:expr; $($field:ident),* $(,)?) => {{
        let mut out: Vec<(&'static str, String)> = Vec::new();
        $( if let Some(v) = &$src.$field { out.push((stringify!($field), v.to_string())); } )*
        out
    }};
}

impl Overrides {
    /// The flags that were given, as config `key, value` pairs.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        pairs!(self; task, model, cab, ablation, h, m, d_model, d_k, d_ff, blocks, positional, c,
            lag_path, lambda, aggregation, threads, lr, optimizer, batch_size, epochs, patience, seed,
            remask, anomaly_quantile)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset prefix as passed to `gen-data --out`.
    #[arg(long)]
    pub data: PathBuf,
    /// `key = value` file applied before the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path [default: `<out-dir>/<run-id>.ckpt`].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Metrics file, appended to [default: `<out-dir>/<run-id>.ndjson`].
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(flatten)]
    pub dir: OutDir,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Also append the record to this metrics file.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 0.98)]
    pub anomaly_quantile: f64,
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub dir: OutDir,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Series lengths.
    #[arg(long, value_delimiter = ',', default_value = "384,768,1536")]
    pub t: Vec<usize>,
    /// Key widths.
    #[arg(long, value_delimiter = ',', default_value = "8")]
    pub dk: Vec<usize>,
    #[arg(long, default_value_t = crate::bench::REPS)]
    pub reps: usize,
    #[arg(long, default_value_t = crate::bench::WARMUP)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub dir: OutDir,
}
