//! Optimizers, the training step, the epoch loop with patience, and
//! evaluation.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{accumulate_sample, forward, input_mask, sample_loss, ModelConfig, ModelParams};
use super::task::{anomaly_decision, DetectionScores};
use crate::error::{CabError, Result};
use crate::numerics::{Matrix, ParamSet};
use crate::synthdata::{apply_mask, SeriesSample, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = CabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(CabError::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::Sgd => "sgd",
        })
    }
}

/// Adam with `(β₁, β₂, ε) = (0.9, 0.999, 1e-8)`, or plain SGD.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    steps: i32,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(CabError::Param(format!("learning rate must be non-negative, got {lr}")));
        }
        Ok(Self {
            kind,
            lr,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Applies one update to every trainable parameter from its `grad`.
    pub fn step<P: ParamSet + ?Sized>(&mut self, params: &mut P) {
        let mut list = params.params_mut();
        match self.kind {
            OptimizerKind::Sgd => {
                for p in list.iter_mut().filter(|p| p.trainable) {
                    let g = p.grad.clone();
                    p.value.axpy(-self.lr, &g).expect("grad shape matches value");
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = list.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
                    self.second = self.first.clone();
                }
                self.steps += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(self.steps);
                let c2 = 1.0 - ADAM_BETA2.powi(self.steps);
                for ((p, m), v) in list.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    if !p.trainable {
                        continue;
                    }
                    let grads = p.grad.as_slice();
                    let values = p.value.as_mut_slice();
                    for (i, &g) in grads.iter().enumerate() {
                        let mi = &mut m.as_mut_slice()[i];
                        let vi = &mut v.as_mut_slice()[i];
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                        values[i] -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Zeroes gradients, accumulates the mean loss gradient over `batch`, checks
/// it and updates the parameters. Returns the loss before the update.
pub fn train_step(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    batch: &[&SeriesSample],
    optimizer: &mut Optimizer,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(CabError::DegenerateTask("empty training batch".into()));
    }
    params.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for sample in batch {
        total += accumulate_sample(params, cfg, sample, scale, None)?;
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(CabError::NonFinite(format!("batch loss evaluated to {loss}")));
    }
    if let Some(p) = params.params().into_iter().find(|p| !p.grad.is_finite()) {
        return Err(CabError::NonFinite(format!("gradient of {} is not finite", p.name)));
    }
    optimizer.step(params);
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Draw fresh imputation masks (same ratio) for the training split every epoch.
    pub remask: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            patience: 10,
            batch_size: 16,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            remask: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub iterations: usize,
    pub seconds_per_iter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Mean loss over `samples` without touching gradients.
pub fn mean_loss(params: &ModelParams, cfg: &ModelConfig, samples: &[SeriesSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(CabError::DegenerateTask("no samples to evaluate".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let (out, _) = forward(params, cfg, &s.values, input_mask(s, cfg.task), None)?;
        total += sample_loss(&out, s, cfg.task)?.0;
    }
    Ok(total / samples.len() as f64)
}

fn remasked(samples: &[SeriesSample], seed: u64, epoch: usize) -> Result<Vec<SeriesSample>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let ratio = s.hidden_count() as f64 / s.values.len() as f64;
            if ratio <= 0.0 || ratio >= 1.0 {
                return Ok(s.clone());
            }
            let mask_seed = seed ^ ((epoch as u64) << 32) ^ (i as u64).wrapping_mul(0x2545_f491_4f6c_dd1d);
            apply_mask(s, ratio, mask_seed)
        })
        .collect()
}

/// Trains with shuffled mini-batches and early stopping on the validation
/// loss; the parameters of the best epoch are restored at the end.
pub fn fit(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    train: &[SeriesSample],
    val: &[SeriesSample],
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitResult> {
    if train.is_empty() || val.is_empty() {
        return Err(CabError::DegenerateTask("training and validation splits must be non-empty".into()));
    }
    if tc.batch_size == 0 || tc.epochs == 0 {
        return Err(CabError::Config("batch size and epochs must be positive".into()));
    }
    let mut optimizer = Optimizer::new(tc.optimizer, tc.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut history = Vec::new();
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 0..tc.epochs {
        let epoch_data;
        let data = if tc.remask && cfg.task == Task::Imputation {
            epoch_data = remasked(train, tc.seed, epoch)?;
            &epoch_data[..]
        } else {
            train
        };
        order.shuffle(&mut rng);
        let start = Instant::now();
        let mut total = 0.0;
        let mut iterations = 0;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<&SeriesSample> = chunk.iter().map(|&i| &data[i]).collect();
            total += train_step(params, cfg, &batch, &mut optimizer)? * batch.len() as f64;
            iterations += 1;
        }
        let seconds = start.elapsed().as_secs_f64();
        let val_loss = mean_loss(params, cfg, val)?;
        if !val_loss.is_finite() {
            return Err(CabError::NonFinite(format!("validation loss at epoch {epoch} is {val_loss}")));
        }
        let record = EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
            iterations,
            seconds_per_iter: seconds / iterations as f64,
        };
        on_epoch(&record);
        history.push(record);
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                stopped_early = true;
                break;
            }
        }
    }
    *params = best.2;
    Ok(FitResult {
        history,
        best_epoch: best.1,
        best_val_loss: best.0,
        stopped_early,
    })
}

/// Test metrics; which fields are set depends on the task.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalMetrics {
    pub loss: f64,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub accuracy: Option<f64>,
    pub detection: Option<DetectionScores>,
    pub threshold: Option<f64>,
    pub degenerate_threshold: Option<bool>,
}

/// Per-step reconstruction error (mean squared error across features).
fn step_errors(params: &ModelParams, cfg: &ModelConfig, samples: &[SeriesSample]) -> Result<Vec<f64>> {
    let mut errors = Vec::new();
    for s in samples {
        let (out, _) = forward(params, cfg, &s.values, None, None)?;
        for t in 0..out.rows() {
            let e: f64 = out
                .row(t)
                .iter()
                .zip(s.values.row(t))
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            errors.push(e / out.cols() as f64);
        }
    }
    Ok(errors)
}

/// Evaluates on `test`. Anomaly thresholds come from the reconstruction
/// errors on `reference` (the validation split) at `anomaly_quantile`.
pub fn evaluate(
    params: &ModelParams,
    cfg: &ModelConfig,
    test: &[SeriesSample],
    reference: &[SeriesSample],
    anomaly_quantile: f64,
) -> Result<EvalMetrics> {
    let mut m = EvalMetrics {
        loss: mean_loss(params, cfg, test)?,
        ..EvalMetrics::default()
    };
    match cfg.task {
        Task::Imputation => {
            let (mut sq, mut abs, mut count) = (0.0, 0.0, 0.0);
            for s in test {
                let mask = s
                    .mask
                    .as_ref()
                    .ok_or_else(|| CabError::DegenerateTask("imputation sample without a mask".into()))?;
                let (out, _) = forward(params, cfg, &s.values, Some(mask), None)?;
                for ((o, v), w) in out.as_slice().iter().zip(s.values.as_slice()).zip(mask.as_slice()) {
                    if *w == 0.0 {
                        sq += (o - v).powi(2);
                        abs += (o - v).abs();
                        count += 1.0;
                    }
                }
            }
            m.mse = Some(sq / count);
            m.mae = Some(abs / count);
        }
        Task::Anomaly => {
            let errors = step_errors(params, cfg, test)?;
            let reference = step_errors(params, cfg, if reference.is_empty() { test } else { reference })?;
            let truth: Vec<bool> = test
                .iter()
                .map(|s| {
                    s.anomaly_flags
                        .clone()
                        .ok_or_else(|| CabError::DegenerateTask("anomaly sample without flags".into()))
                })
                .collect::<Result<Vec<_>>>()?
                .concat();
            let d = anomaly_decision(&errors, &truth, anomaly_quantile, Some(&reference))?;
            m.detection = Some(d.scores);
            m.threshold = Some(d.threshold);
            m.degenerate_threshold = Some(d.degenerate);
        }
        Task::Classification => {
            let mut correct = 0;
            for s in test {
                let (out, _) = forward(params, cfg, &s.values, None, None)?;
                let pred = out
                    .row(0)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                    .0;
                if Some(pred) == s.label {
                    correct += 1;
                }
            }
            m.accuracy = Some(correct as f64 / test.len() as f64);
        }
    }
    Ok(m)
}
