//! Correlated attention block (CAB).
//!
//! Three stages operate across feature channels:
//!
//! 1. column-wise ℓ2 normalization, `Q̂ = normalize(Q)`, `K̂ = normalize(K)`;
//! 2. lag filtering: every lag `l ∈ [1, T−1]` is scored by
//!    `λ·Σᵢ|M_l(i,i)| + (1−λ)·Σ_{i≠j}|M_l(i,j)|` with `M_l = roll(K̂, l)ᵀ Q̂`,
//!    and the top `k = c⌈ln T⌉` lags are kept;
//! 3. aggregation,
//!    `(1−β)·V·softmax(K̂ᵀQ̂/τ) + β·Σᵢ roll(V, lᵢ)·softmax(roll(K̂, lᵢ)ᵀQ̂/τ)`,
//!    where the softmax normalizes each column of the d×d score matrix, so every
//!    output column is a convex combination of the columns of the rolled values.
//!
//! Lag selection is piecewise constant in the inputs and is treated as a
//! constant by the backward pass; gradients flow through the recomputed
//! `M_l` of the selected lags only.

use std::fmt;
use std::str::FromStr;

use crate::error::{CabError, Result};
use crate::numerics::ops::roll_unchecked;
use crate::numerics::{
    l2_normalize_cols, l2_normalize_cols_backward, roll_backward, softmax_cols,
    softmax_cols_backward, Matrix, L2_EPSILON,
};
use crate::xcorr::{lag_matrix, lag_parts, topk_lags, LagPath, LagSelection};

/// Decoded CAB scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CabScalars {
    pub lambda: f64,
    pub beta: f64,
    pub tau: f64,
}

impl Default for CabScalars {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            beta: 0.5,
            tau: 1.0,
        }
    }
}

/// How λ takes part in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaMode {
    /// λ only ranks lags; it receives no gradient.
    #[default]
    Fixed,
    /// Soft scoring: each selected lag's term is additionally weighted by the
    /// softmax of the selected lags' combined scores, which gives λ a
    /// gradient path.
    Learnable,
}

/// Normalisation of the lagged sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LagAggregation {
    /// `β·Σᵢ term(lᵢ)`, as written.
    #[default]
    Sum,
    /// `β/k·Σᵢ term(lᵢ)`, which keeps the block output a convex combination.
    Mean,
}

impl FromStr for LambdaMode {
    type Err = CabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "learnable" => Ok(Self::Learnable),
            other => Err(CabError::Config(format!("unknown lambda mode '{other}'"))),
        }
    }
}

impl fmt::Display for LambdaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fixed => "fixed",
            Self::Learnable => "learnable",
        })
    }
}

impl FromStr for LagAggregation {
    type Err = CabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "mean" => Ok(Self::Mean),
            other => Err(CabError::Config(format!("unknown lag aggregation '{other}'"))),
        }
    }
}

impl fmt::Display for LagAggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sum => "sum",
            Self::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CabConfig {
    /// Multiplier in `k = c⌈ln T⌉`.
    pub c: usize,
    pub lag_path: LagPath,
    pub lambda_mode: LambdaMode,
    /// When false, no lags are scored and only the instantaneous term
    /// remains (β is treated as 0).
    pub filtering: bool,
    pub aggregation: LagAggregation,
    pub threads: usize,
    pub epsilon: f64,
}

impl Default for CabConfig {
    fn default() -> Self {
        Self {
            c: 1,
            lag_path: LagPath::Fft,
            lambda_mode: LambdaMode::Fixed,
            filtering: true,
            aggregation: LagAggregation::Sum,
            threads: 1,
            epsilon: L2_EPSILON,
        }
    }
}

#[derive(Debug, Clone)]
struct LagTerm {
    lag: usize,
    scores: Matrix,
    attn: Matrix,
    out: Matrix,
    weight: f64,
}

#[derive(Debug, Clone)]
struct SoftScoring {
    /// Softmax over the selected lags' combined scores.
    probs: Vec<f64>,
    diag: Vec<f64>,
    nondiag: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CabCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    q_hat: Matrix,
    k_hat: Matrix,
    terms: Vec<LagTerm>,
    soft: Option<SoftScoring>,
    scalars: CabScalars,
    selection: Option<LagSelection>,
    aggregation: LagAggregation,
    epsilon: f64,
}

impl CabCache {
    /// Lags in effect (excluding the instantaneous lag 0).
    pub fn lags(&self) -> Vec<usize> {
        self.terms.iter().skip(1).map(|t| t.lag).collect()
    }

    pub fn selection(&self) -> Option<&LagSelection> {
        self.selection.as_ref()
    }

    /// Column-stochastic weights of the instantaneous term.
    pub fn instantaneous_weights(&self) -> &Matrix {
        &self.terms[0].attn
    }
}

#[derive(Debug, Clone)]
pub struct CabGrad {
    pub dq: Matrix,
    pub dk: Matrix,
    pub dv: Matrix,
    pub dlambda: f64,
    pub dbeta: f64,
    pub dtau: f64,
}

fn check_inputs(q: &Matrix, k: &Matrix, v: &Matrix, scalars: &CabScalars) -> Result<()> {
    q.ensure_same_shape(k, "correlated_attention(q, k)")?;
    q.ensure_same_shape(v, "correlated_attention(q, v)")?;
    if q.rows() < 2 {
        return Err(CabError::DegenerateLength(q.rows()));
    }
    if !(0.0..=1.0).contains(&scalars.beta) {
        return Err(CabError::Param(format!("beta must lie in [0, 1], got {}", scalars.beta)));
    }
    if !(0.0..=1.0).contains(&scalars.lambda) {
        return Err(CabError::Param(format!(
            "lambda must lie in [0, 1], got {}",
            scalars.lambda
        )));
    }
    if !(scalars.tau > 0.0) {
        return Err(CabError::Param(format!("tau must be positive, got {}", scalars.tau)));
    }
    Ok(())
}

/// Selects lags for already-normalized queries and keys.
pub fn select_lags(
    q_hat: &Matrix,
    k_hat: &Matrix,
    lambda: f64,
    cfg: &CabConfig,
) -> Result<LagSelection> {
    let parts = lag_parts(q_hat, k_hat, cfg.lag_path, cfg.threads)?;
    topk_lags(&parts.combine(lambda)?, cfg.c, q_hat.rows())
}

fn term(q_hat: &Matrix, k_hat: &Matrix, v: &Matrix, lag: usize, tau: f64) -> Result<LagTerm> {
    let scores = lag_matrix(q_hat, k_hat, lag)?;
    let attn = softmax_cols(&scores, tau)?;
    let out = roll_unchecked(v, lag).matmul(&attn)?;
    Ok(LagTerm {
        lag,
        scores,
        attn,
        out,
        weight: 0.0,
    })
}

fn abs_parts(m: &Matrix) -> (f64, f64) {
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if i == j {
                diag += m[(i, j)].abs();
            } else {
                off += m[(i, j)].abs();
            }
        }
    }
    (diag, off)
}

fn softmax_vec(x: &[f64]) -> Vec<f64> {
    let max = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Runs the block. `frozen_lags` replaces lag selection with a fixed list,
/// which is how gradient checks hold the selection constant.
pub fn correlated_attention_forward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    scalars: CabScalars,
    cfg: &CabConfig,
    frozen_lags: Option<&[usize]>,
) -> Result<(Matrix, CabCache)> {
    check_inputs(q, k, v, &scalars)?;
    let q_hat = l2_normalize_cols(q, cfg.epsilon)?;
    let k_hat = l2_normalize_cols(k, cfg.epsilon)?;

    let (lags, selection) = if !cfg.filtering {
        (Vec::new(), None)
    } else if let Some(lags) = frozen_lags {
        if let Some(&bad) = lags.iter().find(|&&l| l == 0 || l >= q.rows()) {
            return Err(CabError::Param(format!(
                "frozen lag {bad} outside [1, {}]",
                q.rows() - 1
            )));
        }
        (lags.to_vec(), None)
    } else {
        let sel = select_lags(&q_hat, &k_hat, scalars.lambda, cfg)?;
        (sel.lags.clone(), Some(sel))
    };
    let beta = if cfg.filtering { scalars.beta } else { 0.0 };

    let mut terms = Vec::with_capacity(lags.len() + 1);
    terms.push(term(&q_hat, &k_hat, v, 0, scalars.tau)?);
    for &lag in &lags {
        terms.push(term(&q_hat, &k_hat, v, lag, scalars.tau)?);
    }

    let n_lagged = lags.len();
    let per_lag = match cfg.aggregation {
        LagAggregation::Sum => beta,
        LagAggregation::Mean if n_lagged > 0 => beta / n_lagged as f64,
        LagAggregation::Mean => 0.0,
    };
    let soft = (cfg.lambda_mode == LambdaMode::Learnable && n_lagged > 0).then(|| {
        let (diag, nondiag): (Vec<f64>, Vec<f64>) =
            terms[1..].iter().map(|t| abs_parts(&t.scores)).unzip();
        let combined: Vec<f64> = diag
            .iter()
            .zip(&nondiag)
            .map(|(d, n)| scalars.lambda * d + (1.0 - scalars.lambda) * n)
            .collect();
        SoftScoring {
            probs: softmax_vec(&combined),
            diag,
            nondiag,
        }
    });

    terms[0].weight = 1.0 - beta;
    for (i, t) in terms.iter_mut().skip(1).enumerate() {
        t.weight = match &soft {
            // n·p_i equals 1 when the scores are all equal.
            Some(s) => per_lag * n_lagged as f64 * s.probs[i],
            None => per_lag,
        };
    }

    let mut out = terms[0].out.scale(terms[0].weight);
    for t in &terms[1..] {
        out.axpy(t.weight, &t.out)?;
    }
    let cache = CabCache {
        q: q.clone(),
        k: k.clone(),
        v: v.clone(),
        q_hat,
        k_hat,
        terms,
        soft,
        scalars: CabScalars { beta, ..scalars },
        selection,
        aggregation: cfg.aggregation,
        epsilon: cfg.epsilon,
    };
    Ok((out, cache))
}

/// Correlated attention output for `q`, `k`, `v` (all T×d_k).
pub fn correlated_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    scalars: CabScalars,
    cfg: &CabConfig,
) -> Result<Matrix> {
    Ok(correlated_attention_forward(q, k, v, scalars, cfg, None)?.0)
}

pub fn correlated_attention_backward(cache: &CabCache, dout: &Matrix) -> Result<CabGrad> {
    let terms = &cache.terms;
    let n_lagged = terms.len() - 1;
    let (t_len, d) = cache.q.shape();
    let CabScalars { lambda, beta, tau } = cache.scalars;

    // ⟨dout, term_i⟩ drives both the β and the soft-scoring gradients.
    let inner: Vec<f64> = terms
        .iter()
        .map(|t| dout.dot(&t.out))
        .collect::<Result<_>>()?;

    let per_lag_unit = match cache.aggregation {
        LagAggregation::Sum => 1.0,
        LagAggregation::Mean if n_lagged > 0 => 1.0 / n_lagged as f64,
        LagAggregation::Mean => 0.0,
    };
    let mut dbeta = -inner[0];
    let mut dlambda = 0.0;
    // Extra gradient on each lagged score matrix from soft scoring.
    let mut dcombined = vec![0.0; n_lagged];
    match &cache.soft {
        Some(s) => {
            let n = n_lagged as f64;
            for (i, p) in s.probs.iter().enumerate() {
                dbeta += per_lag_unit * n * p * inner[i + 1];
            }
            let dp: Vec<f64> = (0..n_lagged)
                .map(|i| beta * per_lag_unit * n * inner[i + 1])
                .collect();
            let mean: f64 = s.probs.iter().zip(&dp).map(|(p, g)| p * g).sum();
            for i in 0..n_lagged {
                dcombined[i] = s.probs[i] * (dp[i] - mean);
                dlambda += dcombined[i] * (s.diag[i] - s.nondiag[i]);
            }
        }
        None => {
            for v in &inner[1..] {
                dbeta += per_lag_unit * v;
            }
        }
    }

    let mut dv = Matrix::zeros(t_len, d);
    let mut dq_hat = Matrix::zeros(t_len, d);
    let mut dk_hat = Matrix::zeros(t_len, d);
    let mut dtau = 0.0;
    for (idx, t) in terms.iter().enumerate() {
        let soft_grad = if idx > 0 { dcombined[idx - 1] } else { 0.0 };
        if t.weight == 0.0 && soft_grad == 0.0 {
            continue;
        }
        let d_term = dout.scale(t.weight);
        // term = roll(V, l) · A
        let d_rolled_v = d_term.matmul_nt(&t.attn)?;
        dv.add_assign(&roll_backward(&d_rolled_v, t.lag)?)?;
        let rolled_v = roll_unchecked(&cache.v, t.lag);
        let d_attn = rolled_v.matmul_tn(&d_term)?;
        let sm = softmax_cols_backward(&t.scores, &t.attn, &d_attn, tau)?;
        dtau += sm.temperature;
        let mut d_scores = sm.input;
        if soft_grad != 0.0 {
            for i in 0..d {
                for j in 0..d {
                    let s = t.scores[(i, j)];
                    if s != 0.0 {
                        let w = if i == j { lambda } else { 1.0 - lambda };
                        d_scores[(i, j)] += soft_grad * w * s.signum();
                    }
                }
            }
        }
        // scores = roll(K̂, l)ᵀ Q̂
        let rolled_k = roll_unchecked(&cache.k_hat, t.lag);
        dq_hat.add_assign(&rolled_k.matmul(&d_scores)?)?;
        let d_rolled_k = cache.q_hat.matmul_nt(&d_scores)?;
        dk_hat.add_assign(&roll_backward(&d_rolled_k, t.lag)?)?;
    }

    Ok(CabGrad {
        dq: l2_normalize_cols_backward(&cache.q, &dq_hat, cache.epsilon)?,
        dk: l2_normalize_cols_backward(&cache.k, &dk_hat, cache.epsilon)?,
        dv,
        dlambda,
        dbeta,
        dtau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops::{sigmoid, softplus};
    use crate::numerics::{check_gradient, GradCheckOptions, Param};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(t: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(t, d, |_, _| rng.random_range(-1.0..1.0))
    }

    fn scalars(beta: f64, tau: f64) -> CabScalars {
        CabScalars {
            lambda: 0.5,
            beta,
            tau,
        }
    }

    #[test]
    fn beta_zero_is_instantaneous_term() {
        let (q, k, v) = (random(16, 4, 1), random(16, 4, 2), random(16, 4, 3));
        let out = correlated_attention(&q, &k, &v, scalars(0.0, 0.7), &CabConfig::default()).unwrap();
        let q_hat = l2_normalize_cols(&q, L2_EPSILON).unwrap();
        let k_hat = l2_normalize_cols(&k, L2_EPSILON).unwrap();
        let expected = v
            .matmul(&softmax_cols(&k_hat.matmul_tn(&q_hat).unwrap(), 0.7).unwrap())
            .unwrap();
        assert_eq!(out, expected);
    }

    #[test]
    fn single_feature_with_beta_zero_returns_values() {
        let (q, k, v) = (random(10, 1, 4), random(10, 1, 5), random(10, 1, 6));
        let out = correlated_attention(&q, &k, &v, scalars(0.0, 1.0), &CabConfig::default()).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn fft_and_naive_selection_agree() {
        for seed in 0..10 {
            let (q, k, v) = (random(16, 4, seed), random(16, 4, seed + 50), random(16, 4, seed + 99));
            let fft_cfg = CabConfig::default();
            let naive_cfg = CabConfig {
                lag_path: LagPath::Naive,
                ..CabConfig::default()
            };
            let (a, ca) = correlated_attention_forward(&q, &k, &v, scalars(0.5, 1.0), &fft_cfg, None).unwrap();
            let (b, cb) = correlated_attention_forward(&q, &k, &v, scalars(0.5, 1.0), &naive_cfg, None).unwrap();
            assert_eq!(ca.lags(), cb.lags());
            assert!(a.max_abs_diff(&b).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn beta_one_keeps_only_lagged_terms() {
        let (q, k, v) = (random(12, 3, 7), random(12, 3, 8), random(12, 3, 9));
        let cfg = CabConfig::default();
        let (out, cache) = correlated_attention_forward(&q, &k, &v, scalars(1.0, 1.0), &cfg, None).unwrap();
        let q_hat = l2_normalize_cols(&q, L2_EPSILON).unwrap();
        let k_hat = l2_normalize_cols(&k, L2_EPSILON).unwrap();
        let mut expected = Matrix::zeros(12, 3);
        for lag in cache.lags() {
            let attn = softmax_cols(&lag_matrix(&q_hat, &k_hat, lag).unwrap(), 1.0).unwrap();
            let rolled = crate::numerics::roll(&v, lag).unwrap();
            expected.add_assign(&rolled.matmul(&attn).unwrap()).unwrap();
        }
        assert!(out.max_abs_diff(&expected).unwrap() <= 1e-14);
    }

    #[test]
    fn mean_aggregation_stays_within_value_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = CabConfig {
            aggregation: LagAggregation::Mean,
            ..CabConfig::default()
        };
        for seed in 0..20 {
            let (q, k) = (random(20, 5, seed), random(20, 5, seed + 1000));
            let (lo, hi) = (-2.0, 3.0);
            let v = Matrix::from_fn(20, 5, |_, _| rng.random_range(lo..hi));
            let beta = rng.random_range(0.0..1.0);
            let out = correlated_attention(&q, &k, &v, scalars(beta, 0.5), &cfg).unwrap();
            assert!(out.as_slice().iter().all(|&x| (lo - 1e-12..=hi + 1e-12).contains(&x)));
        }
    }

    #[test]
    fn sum_aggregation_scales_the_value_range() {
        let cfg = CabConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (q, k) = (random(24, 4, 1), random(24, 4, 2));
        let v = Matrix::from_fn(24, 4, |_, _| rng.random_range(1.0..2.0));
        let beta = 0.3;
        let (out, cache) = correlated_attention_forward(&q, &k, &v, scalars(beta, 1.0), &cfg, None).unwrap();
        let mass = (1.0 - beta) + beta * cache.lags().len() as f64;
        assert!(out.as_slice().iter().all(|&x| x >= mass * 1.0 - 1e-12 && x <= mass * 2.0 + 1e-12));
    }

    #[test]
    fn lowering_temperature_sharpens_the_column_maximum() {
        let s = Matrix::from_rows(&[vec![0.9, -0.1], vec![0.2, 0.4], vec![-0.5, 0.3]]).unwrap();
        let mut last = [0.0, 0.0];
        for tau in [4.0, 2.0, 1.0, 0.5, 0.25] {
            let a = softmax_cols(&s, tau).unwrap();
            let now = [a[(0, 0)], a[(1, 1)]];
            assert!(now[0] > last[0] && now[1] > last[1]);
            last = now;
        }
    }

    #[test]
    fn positive_rescaling_leaves_selection_unchanged() {
        let cfg = CabConfig::default();
        for seed in 0..10 {
            let (q, k, v) = (random(32, 4, seed), random(32, 4, seed + 7), random(32, 4, seed + 9));
            let (_, base) = correlated_attention_forward(&q, &k, &v, scalars(0.5, 1.0), &cfg, None).unwrap();
            for s in [1e-3, 0.37, 12.0, 4e3] {
                let (_, scaled) = correlated_attention_forward(
                    &q.scale(s),
                    &k.scale(s),
                    &v,
                    scalars(0.5, 1.0),
                    &cfg,
                    None,
                )
                .unwrap();
                assert_eq!(base.lags(), scaled.lags());
            }
        }
    }

    #[test]
    fn filtering_off_ignores_beta() {
        let (q, k, v) = (random(10, 3, 1), random(10, 3, 2), random(10, 3, 3));
        let off = CabConfig {
            filtering: false,
            ..CabConfig::default()
        };
        let a = correlated_attention(&q, &k, &v, scalars(0.9, 1.0), &off).unwrap();
        let b = correlated_attention(&q, &k, &v, scalars(0.0, 1.0), &CabConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn input_errors() {
        let x = random(8, 2, 1);
        let cfg = CabConfig::default();
        assert!(matches!(
            correlated_attention(&random(1, 2, 1), &random(1, 2, 2), &random(1, 2, 3), scalars(0.5, 1.0), &cfg),
            Err(CabError::DegenerateLength(1))
        ));
        assert!(matches!(
            correlated_attention(&x, &random(8, 3, 2), &x, scalars(0.5, 1.0), &cfg),
            Err(CabError::Shape { .. })
        ));
        assert!(correlated_attention(&x, &x, &x, scalars(0.5, 0.0), &cfg).is_err());
        assert!(correlated_attention(&x, &x, &x, scalars(1.5, 1.0), &cfg).is_err());
        assert!(correlated_attention_forward(&x, &x, &x, scalars(0.5, 1.0), &cfg, Some(&[0])).is_err());
    }

    /// Gradient check over (Q, K, V, β_raw, τ_raw, λ_raw) with the lag
    /// selection frozen at the one made at the base point.
    fn gradcheck(cfg: CabConfig, seed: u64) {
        let (q, k, v) = (random(8, 4, seed), random(8, 4, seed + 1), random(8, 4, seed + 2));
        let upstream = random(8, 4, seed + 3);
        let mut ps = vec![
            Param::new("q", q),
            Param::new("k", k),
            Param::new("v", v),
            Param::scalar("beta_raw", 0.3),
            Param::scalar("tau_raw", 0.2),
            Param::scalar("lambda_raw", -0.4),
        ];
        if cfg.lambda_mode == LambdaMode::Fixed {
            ps[5].trainable = false;
        }
        let decode = |ps: &Vec<Param>| CabScalars {
            lambda: sigmoid(ps[5].value.item()),
            beta: sigmoid(ps[3].value.item()),
            tau: softplus(ps[4].value.item()),
        };
        let (_, cache) = correlated_attention_forward(
            &ps[0].value,
            &ps[1].value,
            &ps[2].value,
            decode(&ps),
            &cfg,
            None,
        )
        .unwrap();
        let lags = cache.lags();
        assert!(!lags.is_empty());
        let g = correlated_attention_backward(&cache, &upstream).unwrap();
        let s = decode(&ps);
        ps[0].grad = g.dq;
        ps[1].grad = g.dk;
        ps[2].grad = g.dv;
        ps[3].grad = Matrix::scalar(g.dbeta * s.beta * (1.0 - s.beta));
        ps[4].grad = Matrix::scalar(g.dtau * sigmoid(ps[4].value.item()));
        ps[5].grad = Matrix::scalar(g.dlambda * s.lambda * (1.0 - s.lambda));
        let report = check_gradient(
            &mut ps,
            |ps| {
                correlated_attention_forward(
                    &ps[0].value,
                    &ps[1].value,
                    &ps[2].value,
                    decode(ps),
                    &cfg,
                    Some(&lags),
                )
                .unwrap()
                .0
                .dot(&upstream)
                .unwrap()
            },
            GradCheckOptions::default(),
        );
        assert!(report.passed, "{:#?}", report.failures().collect::<Vec<_>>());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in [1, 20, 300] {
            gradcheck(CabConfig::default(), seed);
        }
    }

    #[test]
    fn gradients_match_with_mean_aggregation() {
        gradcheck(
            CabConfig {
                aggregation: LagAggregation::Mean,
                ..CabConfig::default()
            },
            5,
        );
    }

    #[test]
    fn soft_scoring_gives_lambda_a_gradient() {
        let cfg = CabConfig {
            lambda_mode: LambdaMode::Learnable,
            ..CabConfig::default()
        };
        for seed in [2, 40] {
            gradcheck(cfg.clone(), seed);
        }
        let (q, k, v) = (random(8, 4, 2), random(8, 4, 3), random(8, 4, 4));
        let (_, cache) = correlated_attention_forward(&q, &k, &v, CabScalars::default(), &cfg, None).unwrap();
        let g = correlated_attention_backward(&cache, &random(8, 4, 5)).unwrap();
        assert!(g.dlambda != 0.0);
    }
}
