//! Seeded synthetic multivariate series with planted lagged couplings,
//! plus masking, anomaly injection and a text dataset format.

mod io;

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CabError, Result};
use crate::numerics::Matrix;

pub use io::{read_dataset, read_dataset_str, write_dataset, write_dataset_string, Dataset};

/// Mask ratios used by the imputation protocol.
pub const MASK_RATIOS: [f64; 4] = [0.125, 0.25, 0.375, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Task {
    #[default]
    Imputation,
    Anomaly,
    Classification,
}

impl FromStr for Task {
    type Err = CabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imputation" => Ok(Self::Imputation),
            "anomaly" => Ok(Self::Anomaly),
            "classification" => Ok(Self::Classification),
            other => Err(CabError::Config(format!("unknown task '{other}'"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Imputation => "imputation",
            Self::Anomaly => "anomaly",
            Self::Classification => "classification",
        })
    }
}

/// `target` receives `source` circularly delayed by `lag`, mixed in with
/// weight `weight`. Written `source:target:lag@weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedLag {
    pub source: usize,
    pub target: usize,
    pub lag: usize,
    pub weight: f64,
}

impl FromStr for PlantedLag {
    type Err = CabError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CabError::Config(format!("planted lag '{s}' is not of the form src:dst:lag@weight"));
        let (pair, weight) = match s.split_once('@') {
            Some((p, w)) => (p, w.trim().parse::<f64>().map_err(|_| bad())?),
            None => (s, 1.0),
        };
        let parts: Vec<usize> = pair
            .split(':')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match parts[..] {
            [source, target, lag] => Ok(Self {
                source,
                target,
                lag,
                weight,
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for PlantedLag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}@{}", self.source, self.target, self.lag, self.weight)
    }
}

/// One series. `mask` uses 1 for observed and 0 for hidden entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSample {
    pub values: Matrix,
    pub mask: Option<Matrix>,
    pub label: Option<usize>,
    pub anomaly_flags: Option<Vec<bool>>,
    pub planted_lags: Vec<PlantedLag>,
}

impl SeriesSample {
    pub fn new(values: Matrix) -> Self {
        Self {
            values,
            mask: None,
            label: None,
            anomaly_flags: None,
            planted_lags: Vec::new(),
        }
    }

    pub fn hidden_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(0, |m| m.as_slice().iter().filter(|&&v| v == 0.0).count())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub task: Task,
    pub t_len: usize,
    pub d: usize,
    pub samples: usize,
    /// Fraction of entries hidden per sample (imputation only).
    pub mask_ratio: f64,
    pub lags: Vec<PlantedLag>,
    /// Noise standard deviation relative to each feature's clean standard
    /// deviation; SNR 10 corresponds to `1/√10`.
    pub noise_level: f64,
    pub ar_coef: f64,
    pub sin_amp: f64,
    pub seed: u64,
    /// Train, validation and test fractions.
    pub splits: [f64; 3],
    pub classes: usize,
    pub anomaly_count: usize,
    /// Spike size in units of the feature's standard deviation.
    pub anomaly_magnitude: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            task: Task::Imputation,
            t_len: 96,
            d: 8,
            samples: 200,
            mask_ratio: 0.25,
            lags: Vec::new(),
            noise_level: 0.1,
            ar_coef: 0.8,
            sin_amp: 1.0,
            seed: 0,
            splits: [0.6, 0.2, 0.2],
            classes: 2,
            anomaly_count: 2,
            anomaly_magnitude: 6.0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CabError::Config(msg));
        if self.t_len < 2 || self.d == 0 {
            return fail(format!("need T >= 2 and d >= 1, got T={} d={}", self.t_len, self.d));
        }
        for p in &self.lags {
            if p.source >= self.d || p.target >= self.d {
                return fail(format!("planted lag {p} refers to a feature outside 0..{}", self.d));
            }
            if p.lag == 0 || p.lag >= self.t_len {
                return fail(format!("planted lag {p} must satisfy 1 <= L <= T-1 = {}", self.t_len - 1));
            }
            if !(0.0..=1.0).contains(&p.weight) {
                return fail(format!("planted lag {p} has weight outside [0, 1]"));
            }
        }
        if (self.splits.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.splits.iter().any(|&s| s < 0.0) {
            return fail(format!("split ratios {:?} must be non-negative and sum to 1", self.splits));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return fail(format!("noise level must be non-negative, got {}", self.noise_level));
        }
        if self.ar_coef.abs() >= 1.0 {
            return fail(format!("AR coefficient must lie in (-1, 1), got {}", self.ar_coef));
        }
        match self.task {
            Task::Imputation if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) => {
                fail(format!("mask ratio must lie in (0, 1), got {}", self.mask_ratio))
            }
            Task::Classification if self.classes < 2 => fail("classification needs at least 2 classes".into()),
            Task::Anomaly if self.anomaly_count >= self.t_len => {
                fail(format!("anomaly count {} must be below T", self.anomaly_count))
            }
            _ => Ok(()),
        }
    }
}

fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Lag used for class `label` given a base planted lag: each class shifts the
/// coupling to a different delay.
pub fn class_lag(base: usize, label: usize, t_len: usize) -> usize {
    (base * (label + 1) - 1) % (t_len - 1) + 1
}

const BURN_IN: usize = 64;

fn base_series(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Matrix {
    let (t_len, d) = (spec.t_len, spec.d);
    let mut x = Matrix::zeros(t_len, d);
    let max_freq = (t_len / 4).max(d);
    let freqs: Vec<usize> = sample_indices(rng, max_freq, d).into_iter().map(|f| f + 1).collect();
    for (j, &freq) in freqs.iter().enumerate() {
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let mut state: f64 = 0.0;
        for step in 0..BURN_IN + t_len {
            let eps: f64 = rng.sample(StandardNormal);
            state = spec.ar_coef * state + eps;
            if step >= BURN_IN {
                let t = step - BURN_IN;
                let angle = std::f64::consts::TAU * (freq * t) as f64 / t_len as f64 + phase;
                x[(t, j)] = state + spec.sin_amp * angle.sin();
            }
        }
    }
    x
}

fn generate_one(spec: &DatasetSpec, index: usize) -> Result<SeriesSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let mut values = base_series(spec, &mut rng);
    let label = (spec.task == Task::Classification).then(|| rng.random_range(0..spec.classes));

    let mut planted = Vec::with_capacity(spec.lags.len());
    for p in &spec.lags {
        let lag = label.map_or(p.lag, |y| class_lag(p.lag, y, spec.t_len));
        let source = values.col(p.source);
        let t_len = spec.t_len;
        for t in 0..t_len {
            let delayed = source[(t + t_len - lag) % t_len];
            values[(t, p.target)] = (1.0 - p.weight) * values[(t, p.target)] + p.weight * delayed;
        }
        planted.push(PlantedLag { lag, ..*p });
    }

    if spec.noise_level > 0.0 {
        for j in 0..spec.d {
            let sd = std_dev(&values.col(j)) * spec.noise_level;
            for t in 0..spec.t_len {
                let n: f64 = rng.sample(StandardNormal);
                values[(t, j)] += sd * n;
            }
        }
    }

    let mut sample = SeriesSample {
        values,
        mask: None,
        label,
        anomaly_flags: None,
        planted_lags: planted,
    };
    let side_seed = spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64);
    match spec.task {
        Task::Imputation => sample = apply_mask(&sample, spec.mask_ratio, side_seed)?,
        Task::Anomaly => {
            sample = inject_anomalies(&sample, spec.anomaly_count, spec.anomaly_magnitude, side_seed)?
        }
        Task::Classification => {}
    }
    Ok(sample)
}

/// Generates `spec.samples` series. Sample `i` depends only on the spec and
/// `i`, so the output is a pure function of the spec.
pub fn gen_lagged_series(spec: &DatasetSpec) -> Result<Vec<SeriesSample>> {
    spec.validate()?;
    (0..spec.samples).map(|i| generate_one(spec, i)).collect()
}

/// Hides `round(ratio·T·d)` uniformly chosen entries. Values are left as they
/// are; the mask records which entries the model may see.
pub fn apply_mask(sample: &SeriesSample, ratio: f64, seed: u64) -> Result<SeriesSample> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CabError::Param(format!("mask ratio must lie in (0, 1), got {ratio}")));
    }
    let (t_len, d) = sample.values.shape();
    let total = t_len * d;
    let hidden = (ratio * total as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = Matrix::filled(t_len, d, 1.0);
    for idx in sample_indices(&mut rng, total, hidden) {
        mask.as_mut_slice()[idx] = 0.0;
    }
    Ok(SeriesSample {
        mask: Some(mask),
        ..sample.clone()
    })
}

/// Adds `count` spikes of size `magnitude·σ` (σ of the spiked feature) at
/// distinct random time steps and flags those steps.
pub fn inject_anomalies(sample: &SeriesSample, count: usize, magnitude: f64, seed: u64) -> Result<SeriesSample> {
    let (t_len, d) = sample.values.shape();
    if count >= t_len {
        return Err(CabError::Param(format!("anomaly count {count} must be below T = {t_len}")));
    }
    let mut out = sample.clone();
    let mut flags = vec![false; t_len];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigmas: Vec<f64> = (0..d).map(|j| std_dev(&sample.values.col(j))).collect();
    for t in sample_indices(&mut rng, t_len, count) {
        let j = rng.random_range(0..d);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        out.values[(t, j)] += sign * magnitude * sigmas[j];
        flags[t] = true;
    }
    out.anomaly_flags = Some(flags);
    Ok(out)
}

/// Splits samples into contiguous train, validation and test parts.
pub fn split(samples: Vec<SeriesSample>, ratios: [f64; 3]) -> [Vec<SeriesSample>; 3] {
    let n = samples.len();
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let mut rest = samples;
    let mut val = rest.split_off(n_train);
    let test = val.split_off(n_val);
    [rest, val, test]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{l2_normalize_cols, L2_EPSILON};
    use crate::xcorr::{xcorr_all_lags_naive, LagParts};

    fn spec() -> DatasetSpec {
        DatasetSpec {
            samples: 4,
            ..DatasetSpec::default()
        }
    }

    /// Lag maximising |roll(x_src, l)·x_dst| after normalisation, over l ≥ 1.
    fn best_pair_lag(values: &Matrix, src: usize, dst: usize) -> (usize, f64) {
        let x = l2_normalize_cols(values, L2_EPSILON).unwrap();
        let stack = xcorr_all_lags_naive(&x, &x).unwrap();
        (1..stack.len())
            .map(|l| (l, stack[l][(src, dst)].abs()))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    #[test]
    fn generation_is_deterministic() {
        let s = DatasetSpec {
            lags: vec!["0:1:7@0.8".parse().unwrap()],
            ..spec()
        };
        assert_eq!(gen_lagged_series(&s).unwrap(), gen_lagged_series(&s).unwrap());
        let other = DatasetSpec { seed: 1, ..s.clone() };
        assert_ne!(gen_lagged_series(&s).unwrap(), gen_lagged_series(&other).unwrap());
    }

    #[test]
    fn unit_coupling_peaks_at_the_planted_lag() {
        let s = DatasetSpec {
            lags: vec!["0:1:7@1".parse().unwrap()],
            noise_level: 0.0,
            samples: 10,
            ..spec()
        };
        for sample in gen_lagged_series(&s).unwrap() {
            let (lag, value) = best_pair_lag(&sample.values, 0, 1);
            assert_eq!(lag, 7);
            assert!((value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_coupling_stays_near_the_noise_floor() {
        let coupled = DatasetSpec {
            lags: vec!["0:1:7@1".parse().unwrap()],
            ar_coef: 0.0,
            sin_amp: 0.0,
            noise_level: 0.0,
            samples: 20,
            ..spec()
        };
        let free = DatasetSpec {
            lags: vec!["0:1:7@0".parse().unwrap()],
            ..coupled.clone()
        };
        let peak = |s: &DatasetSpec| {
            let v: Vec<f64> = gen_lagged_series(s)
                .unwrap()
                .iter()
                .map(|x| best_pair_lag(&x.values, 0, 1).1)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        // Independent white series of length 96: the maximum over 95 lags of
        // |r| sits around 0.25, far below the coupled value of 1.
        let floor = peak(&free);
        assert!(floor < 0.45, "noise floor {floor}");
        assert!(peak(&coupled) > 0.99);
    }

    #[test]
    fn planted_lags_rank_first_without_noise() {
        let s = DatasetSpec {
            lags: vec!["0:1:7@1".parse().unwrap(), "2:3:13@1".parse().unwrap()],
            noise_level: 0.0,
            samples: 5,
            ..spec()
        };
        for sample in gen_lagged_series(&s).unwrap() {
            assert_eq!(best_pair_lag(&sample.values, 0, 1).0, 7);
            assert_eq!(best_pair_lag(&sample.values, 2, 3).0, 13);
            let x = l2_normalize_cols(&sample.values, L2_EPSILON).unwrap();
            let parts = LagParts::from_stack(&xcorr_all_lags_naive(&x, &x).unwrap());
            assert!(parts.nondiag.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn mask_counts_follow_the_rounding_rule() {
        let sample = SeriesSample::new(Matrix::zeros(96, 8));
        for (ratio, hidden) in [(0.5, 384), (0.125, 96), (0.25, 192), (0.375, 288)] {
            let a = apply_mask(&sample, ratio, 1).unwrap();
            let b = apply_mask(&sample, ratio, 2).unwrap();
            assert_eq!(a.hidden_count(), hidden);
            assert_eq!(b.hidden_count(), hidden);
            assert_ne!(a.mask, b.mask);
            assert_eq!(a.values, sample.values);
        }
        assert!(apply_mask(&sample, 0.0, 1).is_err());
        assert!(apply_mask(&sample, 1.0, 1).is_err());
    }

    #[test]
    fn anomalies_are_the_largest_deviations() {
        let s = DatasetSpec {
            task: Task::Classification,
            ..spec()
        };
        let clean = gen_lagged_series(&s).unwrap().remove(0);
        let none = inject_anomalies(&clean, 0, 20.0, 5).unwrap();
        assert_eq!(none.values, clean.values);
        assert!(none.anomaly_flags.as_ref().unwrap().iter().all(|f| !f));

        let spiked = inject_anomalies(&clean, 5, 20.0, 5).unwrap();
        assert_eq!(spiked, inject_anomalies(&clean, 5, 20.0, 5).unwrap());
        let dev: Vec<f64> = (0..96)
            .map(|t| {
                (0..8)
                    .map(|j| (spiked.values[(t, j)] - clean.values[(t, j)]).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let mut order: Vec<usize> = (0..96).collect();
        order.sort_by(|&a, &b| dev[b].total_cmp(&dev[a]));
        let flags = spiked.anomaly_flags.unwrap();
        let mut top: Vec<usize> = order[..5].to_vec();
        top.sort_unstable();
        let flagged: Vec<usize> = (0..96).filter(|&t| flags[t]).collect();
        assert_eq!(top, flagged);
    }

    #[test]
    fn classes_use_distinct_lags() {
        assert_eq!(class_lag(7, 0, 96), 7);
        assert_eq!(class_lag(7, 1, 96), 14);
        assert_eq!(class_lag(50, 1, 96), 5);
        let s = DatasetSpec {
            task: Task::Classification,
            lags: vec!["0:1:7@1".parse().unwrap()],
            classes: 3,
            samples: 30,
            ..spec()
        };
        for sample in gen_lagged_series(&s).unwrap() {
            let y = sample.label.unwrap();
            assert!(y < 3);
            assert_eq!(sample.planted_lags[0].lag, class_lag(7, y, 96));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad_lag = DatasetSpec {
            lags: vec!["0:1:96@1".parse().unwrap()],
            ..spec()
        };
        assert!(gen_lagged_series(&bad_lag).is_err());
        let bad_feature = DatasetSpec {
            lags: vec!["0:9:3@1".parse().unwrap()],
            ..spec()
        };
        assert!(gen_lagged_series(&bad_feature).is_err());
        let bad_split = DatasetSpec {
            splits: [0.5, 0.2, 0.2],
            ..spec()
        };
        assert!(bad_split.validate().is_err());
        assert!("1:2".parse::<PlantedLag>().is_err());
        assert_eq!("0:1:7@0.8".parse::<PlantedLag>().unwrap().to_string(), "0:1:7@0.8");
        assert_eq!("0:1:7".parse::<PlantedLag>().unwrap().weight, 1.0);
    }

    #[test]
    fn splits_are_sixty_twenty_twenty() {
        let samples = vec![SeriesSample::new(Matrix::zeros(2, 1)); 10];
        let [train, val, test] = split(samples, [0.6, 0.2, 0.2]);
        assert_eq!((train.len(), val.len(), test.len()), (6, 2, 2));
    }
}
