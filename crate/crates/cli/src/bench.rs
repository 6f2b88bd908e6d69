//! Timing of the direct and FFT lag paths and of a full correlated
//! attention forward pass.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use cab_core::attention::{correlated_attention_forward, CabConfig, CabScalars};
use cab_core::numerics::{l2_normalize_cols, L2_EPSILON};
use cab_core::synthdata::{gen_lagged_series, DatasetSpec, Task};
use cab_core::xcorr::{xcorr_all_lags_fft, xcorr_all_lags_naive, FftOptions};
use cab_core::Matrix;

use crate::error::{CliError, CliResult};

pub const WARMUP: usize = 3;
pub const REPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchOp {
    Naive,
    Fft,
    CabForward,
}

impl BenchOp {
    pub const ALL: [BenchOp; 3] = [Self::Naive, Self::Fft, Self::CabForward];

    pub fn name(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::Fft => "fft",
            Self::CabForward => "cab_forward",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub t_values: Vec<usize>,
    pub dk_values: Vec<usize>,
    pub warmup: usize,
    pub reps: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            t_values: vec![384, 768, 1536],
            dk_values: vec![8],
            warmup: WARMUP,
            reps: REPS,
            threads: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub op: BenchOp,
    pub t: usize,
    pub d_k: usize,
    pub reps: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Median, min and max of a set of timings.
pub fn summarize(mut samples: Vec<f64>) -> (f64, f64, f64) {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let median = if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    };
    (median, samples[0], samples[n - 1])
}

fn time_once(f: &mut dyn FnMut()) -> f64 {
    let start = Instant::now();
    f();
    start.elapsed().as_secs_f64()
}

/// Median, min and max wall-clock seconds of `reps` calls after `warmup`
/// untimed ones.
pub fn time_median(warmup: usize, reps: usize, mut f: impl FnMut()) -> (f64, f64, f64) {
    for _ in 0..warmup {
        f();
    }
    summarize((0..reps).map(|_| time_once(&mut f)).collect())
}

/// Two independent synthetic series of shape `t × d_k`.
fn inputs(t: usize, d_k: usize, seed: u64) -> CliResult<(Matrix, Matrix)> {
    let spec = DatasetSpec {
        task: Task::Anomaly,
        t_len: t,
        d: d_k,
        samples: 2,
        anomaly_count: 0,
        seed,
        ..DatasetSpec::default()
    };
    let mut samples = gen_lagged_series(&spec)?;
    let k = samples.pop().expect("two samples").values;
    let q = samples.pop().expect("two samples").values;
    Ok((q, k))
}

pub fn run_bench(settings: &BenchSettings, ops: &[BenchOp]) -> CliResult<Vec<BenchRow>> {
    if settings.reps == 0 {
        return Err(CliError::Usage("--reps must be positive".into()));
    }
    if settings.t_values.iter().any(|&t| t < 2) || settings.dk_values.contains(&0) {
        return Err(CliError::Usage("--t values must be >= 2 and --dk values >= 1".into()));
    }
    let fft_opts = FftOptions {
        keep_stack: true,
        threads: settings.threads.max(1),
    };
    let cab_cfg = CabConfig {
        threads: settings.threads.max(1),
        ..CabConfig::default()
    };
    let mut inputs_by_size = Vec::new();
    for &d_k in &settings.dk_values {
        for &t in &settings.t_values {
            let (q, k) = inputs(t, d_k, settings.seed)?;
            let q_hat = l2_normalize_cols(&q, L2_EPSILON)?;
            let k_hat = l2_normalize_cols(&k, L2_EPSILON)?;
            inputs_by_size.push((t, d_k, q, k, q_hat, k_hat));
        }
    }
    // One closure per (size, op). Repetitions go round-robin over all of
    // them so slow drift in machine load hits every cell alike.
    let mut cells: Vec<(BenchOp, usize, usize, Box<dyn FnMut() + '_>)> = Vec::new();
    for (t, d_k, q, k, q_hat, k_hat) in &inputs_by_size {
        for &op in ops {
            let f: Box<dyn FnMut()> = match op {
                BenchOp::Naive => Box::new(move || {
                    black_box(xcorr_all_lags_naive(black_box(q_hat), black_box(k_hat)).ok());
                }),
                BenchOp::Fft => Box::new(move || {
                    black_box(xcorr_all_lags_fft(black_box(q_hat), black_box(k_hat), fft_opts).ok());
                }),
                BenchOp::CabForward => {
                    let cfg = &cab_cfg;
                    Box::new(move || {
                        black_box(correlated_attention_forward(q, k, q, CabScalars::default(), cfg, None).ok());
                    })
                }
            };
            cells.push((op, *t, *d_k, f));
        }
    }
    for _ in 0..settings.warmup {
        for cell in &mut cells {
            (cell.3)();
        }
    }
    let mut samples = vec![Vec::with_capacity(settings.reps); cells.len()];
    for _ in 0..settings.reps {
        for (cell, out) in cells.iter_mut().zip(&mut samples) {
            out.push(time_once(&mut cell.3));
        }
    }
    let rows = cells
        .iter()
        .zip(samples)
        .map(|((op, t, d_k, _), s)| {
            let (median, min, max) = summarize(s);
            BenchRow {
                op: *op,
                t: *t,
                d_k: *d_k,
                reps: settings.reps,
                median,
                min,
                max,
            }
        })
        .collect();
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("op,t,d_k,reps,median_s,min_s,max_s\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.9},{:.9},{:.9}",
            r.op.name(),
            r.t,
            r.d_k,
            r.reps,
            r.median,
            r.min,
            r.max
        );
    }
    out
}

/// Median time of `op` at `(t, d_k)`.
pub fn lookup(rows: &[BenchRow], op: BenchOp, t: usize, d_k: usize) -> Option<f64> {
    rows.iter()
        .find(|r| r.op == op && r.t == t && r.d_k == d_k)
        .map(|r| r.median)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even_counts() {
        let mut calls = 0;
        let (med, min, max) = time_median(2, 5, || calls += 1);
        assert_eq!(calls, 7);
        assert!(min <= med && med <= max);
    }

    #[test]
    fn table_has_one_row_per_op_and_length() {
        let settings = BenchSettings {
            t_values: vec![16, 32],
            dk_values: vec![2],
            warmup: 0,
            reps: 2,
            ..BenchSettings::default()
        };
        let rows = run_bench(&settings, &BenchOp::ALL).unwrap();
        assert_eq!(rows.len(), 6);
        let csv = bench_csv(&rows);
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.lines().nth(1).unwrap().starts_with("naive,16,2,2,"));
        assert!(lookup(&rows, BenchOp::Fft, 32, 2).is_some());
        assert!(lookup(&rows, BenchOp::Fft, 64, 2).is_none());
    }

    #[test]
    fn rejects_empty_repetitions() {
        let settings = BenchSettings {
            reps: 0,
            ..BenchSettings::default()
        };
        assert!(matches!(run_bench(&settings, &BenchOp::ALL), Err(CliError::Usage(_))));
    }
}
