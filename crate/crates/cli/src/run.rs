//! Training, evaluation and ablation runs with their metrics records.

use std::fmt::Write as _;
use std::path::Path;

use cab_core::model::{evaluate, fit, EvalMetrics, FitResult, ModelConfig, ModelParams};
use cab_core::numerics::ParamSet;
use cab_core::synthdata::{read_dataset, Dataset, SeriesSample, Task};
use cab_core::CabError;
use serde_json::{json, Map, Value};

use crate::config::{hash_pairs, Preset, RunConfig};
use crate::error::{CliError, CliResult};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// The three splits of a dataset written by `gen-data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub task: Task,
    pub t_len: usize,
    pub d: usize,
    pub train: Vec<SeriesSample>,
    pub val: Vec<SeriesSample>,
    pub test: Vec<SeriesSample>,
}

impl Splits {
    pub fn classes(&self) -> usize {
        let max = self
            .train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .filter_map(|s| s.label)
            .max();
        max.map_or(2, |m| (m + 1).max(2))
    }
}

/// `<prefix>.train`, `<prefix>.val` and `<prefix>.test`.
pub fn split_path(prefix: &Path, split: &str) -> std::path::PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(".");
    name.push(split);
    name.into()
}

pub fn load_splits(prefix: &Path) -> CliResult<Splits> {
    let [train, val, test]: [Dataset; 3] = SPLITS
        .iter()
        .map(|s| read_dataset(split_path(prefix, s)))
        .collect::<Result<Vec<_>, CabError>>()?
        .try_into()
        .expect("three splits");
    for other in [&val, &test] {
        if (other.task, other.t_len, other.d) != (train.task, train.t_len, train.d) {
            return Err(CliError::File(format!(
                "splits of '{}' disagree on task or shape",
                prefix.display()
            )));
        }
    }
    Ok(Splits {
        task: train.task,
        t_len: train.t_len,
        d: train.d,
        train: train.samples,
        val: val.samples,
        test: test.samples,
    })
}

pub struct RunOutcome {
    pub run_id: String,
    pub config_hash: String,
    pub model: ModelConfig,
    pub params: ModelParams,
    pub fit: FitResult,
    pub metrics: EvalMetrics,
}

/// Test metrics as a JSON object; fields that do not apply to the task are
/// left out.
pub fn metrics_json(m: &EvalMetrics) -> Value {
    let mut out = Map::new();
    out.insert("loss".into(), json!(m.loss));
    if let Some(v) = m.mse {
        out.insert("mse".into(), json!(v));
    }
    if let Some(v) = m.mae {
        out.insert("mae".into(), json!(v));
    }
    if let Some(v) = m.accuracy {
        out.insert("accuracy".into(), json!(v));
    }
    if let Some(d) = m.detection {
        out.insert("precision".into(), json!(d.precision));
        out.insert("recall".into(), json!(d.recall));
        out.insert("f1".into(), json!(d.f1));
    }
    if let Some(v) = m.threshold {
        out.insert("threshold".into(), json!(v));
    }
    if let Some(v) = m.degenerate_threshold {
        out.insert("degenerate_threshold".into(), json!(v));
    }
    Value::Object(out)
}

/// Trains and tests one configuration, passing every metrics record to
/// `sink` as it is produced.
pub fn run_training(cfg: &RunConfig, data: &Splits, mut sink: impl FnMut(&Value)) -> CliResult<RunOutcome> {
    if let Some(task) = cfg.task {
        if task != data.task {
            return Err(CliError::Usage(format!(
                "--task {task} does not match the dataset task {}",
                data.task
            )));
        }
    }
    let task = data.task;
    let model = cfg.model_config(task, data.t_len, data.d, data.classes())?;
    let tc = cfg.train_config(task)?;
    let run_id = cfg.run_id(task);
    let config_hash = cfg.hash(task);
    let mut params = ModelParams::init(&model, cfg.seed)?;

    let fitted = fit(&mut params, &model, &data.train, &data.val, &tc, |e| {
        sink(&json!({
            "kind": "epoch",
            "run_id": run_id,
            "config_hash": config_hash,
            "epoch": e.epoch,
            "train_loss": e.train_loss,
            "val_loss": e.val_loss,
            "iterations": e.iterations,
            "seconds_per_iter": e.seconds_per_iter,
        }))
    });
    let fitted = match fitted {
        Ok(f) => f,
        Err(e) => {
            sink(&json!({
                "kind": "error",
                "run_id": run_id,
                "config_hash": config_hash,
                "error": e.to_string(),
            }));
            return Err(e.into());
        }
    };
    let metrics = evaluate(&params, &model, &data.test, &data.val, cfg.anomaly_quantile)?;
    let iterations: usize = fitted.history.iter().map(|e| e.iterations).sum();
    let seconds: f64 = fitted
        .history
        .iter()
        .map(|e| e.seconds_per_iter * e.iterations as f64)
        .sum();
    sink(&json!({
        "kind": "summary",
        "run_id": run_id,
        "config_hash": config_hash,
        "task": task.to_string(),
        "ablation": cfg.ablation.to_string(),
        "params": params.num_values(),
        "epochs_run": fitted.history.len(),
        "best_epoch": fitted.best_epoch,
        "best_val_loss": fitted.best_val_loss,
        "stopped_early": fitted.stopped_early,
        "seconds_per_iter": if iterations > 0 { seconds / iterations as f64 } else { 0.0 },
        "test": metrics_json(&metrics),
    }));
    Ok(RunOutcome {
        run_id,
        config_hash,
        model,
        params,
        fit: fitted,
        metrics,
    })
}

/// Summary record for a stored model evaluated on the test split.
pub fn run_eval(
    model: &ModelConfig,
    params: &ModelParams,
    data: &Splits,
    anomaly_quantile: f64,
) -> CliResult<(EvalMetrics, Value)> {
    if (model.task, model.seq_len, model.d_in) != (data.task, data.t_len, data.d) {
        return Err(CliError::Usage(format!(
            "checkpoint expects {} series of shape {}x{}, dataset has {} series of shape {}x{}",
            model.task, model.seq_len, model.d_in, data.task, data.t_len, data.d
        )));
    }
    let metrics = evaluate(params, model, &data.test, &data.val, anomaly_quantile)?;
    let pairs = model.to_pairs();
    let hash = hash_pairs(pairs.iter().map(|(k, v)| (*k, v.as_str())));
    let record = json!({
        "kind": "eval",
        "run_id": format!("eval-{}", &hash[..12]),
        "config_hash": hash,
        "task": model.task.to_string(),
        "params": params.num_values(),
        "test": metrics_json(&metrics),
    });
    Ok((metrics, record))
}

/// One line of the ablation comparison.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub preset: Preset,
    pub temporal_heads: usize,
    pub filtering: bool,
    pub lambda_learnable: bool,
    pub beta_learnable: bool,
    pub params: usize,
    pub best_epoch: usize,
    pub metrics: EvalMetrics,
}

impl AblationRow {
    pub fn from_outcome(preset: Preset, out: &RunOutcome) -> Self {
        let trainable = |suffix: &str| {
            out.params
                .params()
                .iter()
                .any(|p| p.trainable && p.name.ends_with(suffix))
        };
        Self {
            preset,
            temporal_heads: out.model.mixture.m,
            filtering: out.model.mixture.cab.filtering,
            lambda_learnable: trainable("lambda_raw"),
            beta_learnable: trainable("beta_raw"),
            params: out.params.num_values(),
            best_epoch: out.fit.best_epoch,
            metrics: out.metrics.clone(),
        }
    }
}

pub const ABLATION_HEADER: &str =
    "preset,temporal_heads,filtering,lambda_learnable,beta_learnable,params,best_epoch,test_loss,mse,mae,accuracy,f1";

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.preset,
            r.temporal_heads,
            r.filtering,
            r.lambda_learnable,
            r.beta_learnable,
            r.params,
            r.best_epoch,
            r.metrics.loss,
            opt(r.metrics.mse),
            opt(r.metrics.mae),
            opt(r.metrics.accuracy),
            opt(r.metrics.detection.map(|d| d.f1)),
        );
    }
    out
}

/// Runs the baseline and every ablation preset on the same data.
pub fn run_ablation(base: &RunConfig, data: &Splits, mut sink: impl FnMut(&Value)) -> CliResult<Vec<AblationRow>> {
    if !base.cab {
        return Err(CliError::Usage("ablate needs correlated heads; drop --cab off".into()));
    }
    Preset::ALL
        .iter()
        .map(|&preset| {
            let cfg = RunConfig {
                ablation: preset,
                ..base.clone()
            };
            let out = run_training(&cfg, data, &mut sink)?;
            Ok(AblationRow::from_outcome(preset, &out))
        })
        .collect()
}
