//! Command-line driver for correlated attention experiments.
//!
//! Every subcommand is a plain function over parsed arguments so it can be
//! driven from tests without spawning the binary.

pub mod args;
pub mod bench;
pub mod config;
pub mod error;
pub mod run;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use cab_core::model::{load_checkpoint, save_checkpoint};
use cab_core::synthdata::{gen_lagged_series, split, write_dataset, Dataset, DatasetSpec, Task};
use serde_json::Value;

pub use args::{BenchArgs, Cli, Command, EvalArgs, GenDataArgs, TrainArgs};
pub use config::{Preset, RunConfig};
pub use error::{CliError, CliResult};

pub fn run(cli: Cli) -> CliResult<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::GenData(a) => {
            for path in gen_data(&a)? {
                writeln!(stdout, "{}", path.display())?;
            }
        }
        Command::Train(a) => {
            let summary = train(&a)?;
            writeln!(stdout, "{summary}")?;
        }
        Command::Eval(a) => {
            let record = eval(&a)?;
            writeln!(stdout, "{record}")?;
        }
        Command::Bench(a) => write!(stdout, "{}", bench(&a)?)?,
        Command::Ablate(a) => write!(stdout, "{}", ablate(&a)?)?,
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::File(format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

/// Appends NDJSON records to a file.
struct MetricsLog {
    path: PathBuf,
    file: fs::File,
}

impl MetricsLog {
    fn open(path: PathBuf) -> CliResult<Self> {
        ensure_parent(&path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::File(format!("{}: {e}", path.display())))?;
        Ok(Self { path, file })
    }

    fn write(&mut self, record: &Value) -> CliResult<()> {
        writeln!(self.file, "{record}").map_err(|e| CliError::File(format!("{}: {e}", self.path.display())))
    }
}

pub fn dataset_spec(a: &GenDataArgs) -> CliResult<DatasetSpec> {
    let splits: [f64; 3] = a
        .splits
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Usage(format!("--splits needs three ratios, got {}", a.splits.len())))?;
    let spec = DatasetSpec {
        task: a.task,
        t_len: a.t.unwrap_or(if a.task == Task::Anomaly { 100 } else { 96 }),
        d: a.d,
        samples: a.samples,
        mask_ratio: a.mask_ratio,
        lags: a.lags.clone(),
        noise_level: a.noise,
        ar_coef: a.ar_coef,
        sin_amp: a.sin_amp,
        seed: a.seed,
        splits,
        classes: a.classes,
        anomaly_count: a.anomalies,
        anomaly_magnitude: a.anomaly_magnitude,
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

/// Writes the three splits and returns their paths.
pub fn gen_data(a: &GenDataArgs) -> CliResult<Vec<PathBuf>> {
    let spec = dataset_spec(a)?;
    let prefix = a.dir.resolve(&a.out);
    ensure_parent(&prefix)?;
    let parts = split(gen_lagged_series(&spec)?, spec.splits);
    let mut written = Vec::new();
    for (name, samples) in run::SPLITS.iter().zip(parts) {
        let path = run::split_path(&prefix, name);
        let data = Dataset {
            task: spec.task,
            t_len: spec.t_len,
            d: spec.d,
            samples,
        };
        write_dataset(&path, &data)?;
        written.push(path);
    }
    Ok(written)
}

/// Defaults, then the config file, then flags.
pub fn run_config(a: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &a.config {
        cfg.apply_file(&a.dir.resolve(path))?;
    }
    for (key, value) in a.overrides.pairs() {
        cfg.set(key, &value)?;
    }
    Ok(cfg)
}

/// Trains, writes the checkpoint and metrics, and returns the summary record.
pub fn train(a: &TrainArgs) -> CliResult<Value> {
    let cfg = run_config(a)?;
    let data = run::load_splits(&a.dir.resolve(&a.data))?;
    let run_id = cfg.run_id(data.task);
    let metrics_path = a
        .metrics
        .as_ref()
        .map(|p| a.dir.resolve(p))
        .unwrap_or_else(|| a.dir.out_dir.join(format!("{run_id}.ndjson")));
    let mut log = MetricsLog::open(metrics_path)?;
    let mut write_err = None;
    let mut summary = Value::Null;
    let outcome = run::run_training(&cfg, &data, |record| {
        if record["kind"] == "summary" {
            summary = record.clone();
        }
        if let Err(e) = log.write(record) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let ckpt = a
        .checkpoint
        .as_ref()
        .map(|p| a.dir.resolve(p))
        .unwrap_or_else(|| a.dir.out_dir.join(format!("{run_id}.ckpt")));
    ensure_parent(&ckpt)?;
    save_checkpoint(&ckpt, &outcome.model, &outcome.params)?;
    eprintln!("checkpoint: {}  metrics: {}", ckpt.display(), log.path.display());
    Ok(summary)
}

pub fn eval(a: &EvalArgs) -> CliResult<Value> {
    let (mut model, params) = load_checkpoint(a.dir.resolve(&a.checkpoint))?;
    if let Some(t) = a.threads {
        model.mixture.cab.threads = t.max(1);
    }
    let data = run::load_splits(&a.dir.resolve(&a.data))?;
    let (_, record) = run::run_eval(&model, &params, &data, a.anomaly_quantile)?;
    if let Some(path) = &a.metrics {
        MetricsLog::open(a.dir.resolve(path))?.write(&record)?;
    }
    Ok(record)
}

/// Runs the timing grid and returns the CSV table.
pub fn bench(a: &BenchArgs) -> CliResult<String> {
    let settings = bench::BenchSettings {
        t_values: a.t.clone(),
        dk_values: a.dk.clone(),
        warmup: a.warmup,
        reps: a.reps,
        threads: a.threads,
        seed: a.seed,
    };
    let table = bench::bench_csv(&bench::run_bench(&settings, &bench::BenchOp::ALL)?);
    if let Some(path) = &a.out {
        let path = a.dir.resolve(path);
        ensure_parent(&path)?;
        fs::write(&path, &table).map_err(|e| CliError::File(format!("{}: {e}", path.display())))?;
    }
    Ok(table)
}

/// Runs every preset; records go to the metrics file and the comparison
/// table to `<out-dir>/ablation.csv`. Returns the table.
pub fn ablate(a: &TrainArgs) -> CliResult<String> {
    if a.overrides.ablation.is_some() {
        return Err(CliError::Usage("ablate runs every preset; drop --ablation".into()));
    }
    let cfg = run_config(a)?;
    let data = run::load_splits(&a.dir.resolve(&a.data))?;
    let metrics_path = a
        .metrics
        .as_ref()
        .map(|p| a.dir.resolve(p))
        .unwrap_or_else(|| a.dir.out_dir.join("ablation.ndjson"));
    let mut log = MetricsLog::open(metrics_path)?;
    let mut write_err = None;
    let rows = run::run_ablation(&cfg, &data, |record| {
        if let Err(e) = log.write(record) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let table = run::ablation_table(&rows);
    let path = a.dir.out_dir.join("ablation.csv");
    ensure_parent(&path)?;
    fs::write(&path, &table).map_err(|e| CliError::File(format!("{}: {e}", path.display())))?;
    Ok(table)
}
