//! Lagged cross-covariance between normalized queries and keys.
//!
//! For a lag `l` the d×d matrix `M_l = roll(K̂, l)ᵀ Q̂` has entries
//! `M_l(i, j) = Σ_t K̂(t − l, i) Q̂(t, j)` (indices mod T). Its diagonal measures
//! auto-correlation at lag `l`, the off-diagonal part cross-correlation between
//! feature pairs. Two routes compute all `T` of them:
//!
//! * [`xcorr_all_lags_naive`]: one direct product per lag, `O(d²T²)`.
//! * [`xcorr_all_lags_fft`]: cross-correlation theorem, `O(d²T log T)`.
//!   Column `i` of the key and `j` of the query are transformed once; the
//!   lag sequence `M_·(i, j)` is `IFFT(conj(F(K̂ᵢ)) · F(Q̂ⱼ))`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{CabError, Result};
use crate::numerics::Matrix;

/// Relative resolution below which two lag scores count as tied.
///
/// Mathematically equal scores (for instance lags `l` and `T − l` when
/// `Q̂ = K̂`) come out of floating point a few ulps apart; quantising at this
/// resolution lets the smaller lag win such ties deterministically.
pub const TIE_RESOLUTION: f64 = 1e-9;

/// Which route computes the per-lag matrices during lag scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LagPath {
    #[default]
    Fft,
    Naive,
}

impl std::str::FromStr for LagPath {
    type Err = CabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fft" => Ok(LagPath::Fft),
            "naive" => Ok(LagPath::Naive),
            other => Err(CabError::Param(format!("unknown lag path {other:?} (fft|naive)"))),
        }
    }
}

impl std::fmt::Display for LagPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LagPath::Fft => "fft",
            LagPath::Naive => "naive",
        })
    }
}

fn check_pair(q_hat: &Matrix, k_hat: &Matrix, op: &'static str) -> Result<()> {
    q_hat.ensure_same_shape(k_hat, op)
}

/// `M_lag = roll(k_hat, lag)ᵀ · q_hat`, without materialising the roll.
pub fn lag_matrix(q_hat: &Matrix, k_hat: &Matrix, lag: usize) -> Result<Matrix> {
    check_pair(q_hat, k_hat, "lag_matrix")?;
    let (t_len, d) = q_hat.shape();
    if lag >= t_len {
        return Err(CabError::Param(format!(
            "lag {lag} out of range for {t_len} time steps"
        )));
    }
    let mut out = Matrix::zeros(d, d);
    for t in 0..t_len {
        let k_row = k_hat.row((t + t_len - lag) % t_len);
        let q_row = q_hat.row(t);
        for (i, &kv) in k_row.iter().enumerate() {
            let out_row = out.row_mut(i);
            for (o, &qv) in out_row.iter_mut().zip(q_row) {
                *o += kv * qv;
            }
        }
    }
    Ok(out)
}

/// All `T` lag matrices by direct products. This is the reference route.
pub fn xcorr_all_lags_naive(q_hat: &Matrix, k_hat: &Matrix) -> Result<Vec<Matrix>> {
    check_pair(q_hat, k_hat, "xcorr_all_lags_naive")?;
    (0..q_hat.rows())
        .map(|l| lag_matrix(q_hat, k_hat, l))
        .collect()
}

/// Per-lag absolute diagonal and off-diagonal sums, before mixing with λ.
#[derive(Debug, Clone, PartialEq)]
pub struct LagParts {
    pub diag: Vec<f64>,
    pub nondiag: Vec<f64>,
}

impl LagParts {
    pub fn zeros(t_len: usize) -> Self {
        Self {
            diag: vec![0.0; t_len],
            nondiag: vec![0.0; t_len],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn from_stack(stack: &[Matrix]) -> Self {
        let mut parts = Self::zeros(stack.len());
        for (l, m) in stack.iter().enumerate() {
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    if i == j {
                        parts.diag[l] += m[(i, j)].abs();
                    } else {
                        parts.nondiag[l] += m[(i, j)].abs();
                    }
                }
            }
        }
        parts
    }

    /// `combined(l) = λ·diag(l) + (1 − λ)·nondiag(l)`.
    pub fn combine(&self, lambda: f64) -> Result<LagScoreVector> {
        check_lambda(lambda)?;
        let combined = self
            .diag
            .iter()
            .zip(&self.nondiag)
            .map(|(d, n)| lambda * d + (1.0 - lambda) * n)
            .collect();
        Ok(LagScoreVector {
            diag_scores: self.diag.clone(),
            nondiag_scores: self.nondiag.clone(),
            combined,
            lambda,
        })
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CabError::Param(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagScoreVector {
    pub diag_scores: Vec<f64>,
    pub nondiag_scores: Vec<f64>,
    pub combined: Vec<f64>,
    pub lambda: f64,
}

/// Scores a materialised stack of lag matrices.
pub fn score_lags(stack: &[Matrix], lambda: f64) -> Result<LagScoreVector> {
    check_lambda(lambda)?;
    LagParts::from_stack(stack).combine(lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FftOptions {
    /// Also return the full `T × d × d` stack (memory `O(T d²)`).
    pub keep_stack: bool,
    /// Worker threads for the per-pair inverse transforms. Results are merged
    /// in a fixed order, so a given thread count is bitwise reproducible.
    pub threads: usize,
}

impl Default for FftOptions {
    fn default() -> Self {
        Self {
            keep_stack: false,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FftOutput {
    pub parts: LagParts,
    pub stack: Option<Vec<Matrix>>,
}

fn spectra(m: &Matrix, fft: &Arc<dyn Fft<f64>>) -> Vec<Vec<Complex<f64>>> {
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    (0..m.cols())
        .map(|j| {
            let mut buf: Vec<Complex<f64>> =
                (0..m.rows()).map(|t| Complex::new(m[(t, j)], 0.0)).collect();
            fft.process_with_scratch(&mut buf, &mut scratch);
            buf
        })
        .collect()
}

struct PairWork<'a> {
    q_spec: &'a [Vec<Complex<f64>>],
    k_spec: &'a [Vec<Complex<f64>>],
    inverse: &'a Arc<dyn Fft<f64>>,
    t_len: usize,
    d: usize,
    keep_stack: bool,
}

/// Partial result of one worker: score accumulators plus, optionally,
/// the `(pair, lag sequence)` values it produced.
struct Partial {
    parts: LagParts,
    values: Vec<(usize, usize, Vec<f64>)>,
}

impl PairWork<'_> {
    fn run(&self, pairs: &[(usize, usize)]) -> Partial {
        let t_len = self.t_len;
        let norm = 1.0 / t_len as f64;
        let mut partial = Partial {
            parts: LagParts::zeros(t_len),
            values: Vec::new(),
        };
        let mut buf = vec![Complex::default(); t_len];
        let mut scratch = vec![Complex::default(); self.inverse.get_inplace_scratch_len()];
        // Two real lag sequences share one complex inverse transform:
        // IFFT(P_a + i·P_b) = r_a + i·r_b because r_a, r_b are real.
        for chunk in pairs.chunks(2) {
            let (ia, ja) = chunk[0];
            let second = chunk.get(1).copied();
            for f in 0..t_len {
                let pa = self.k_spec[ia][f].conj() * self.q_spec[ja][f];
                let pb = match second {
                    Some((ib, jb)) => self.k_spec[ib][f].conj() * self.q_spec[jb][f],
                    None => Complex::default(),
                };
                buf[f] = pa + Complex::new(-pb.im, pb.re);
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            self.accumulate(&mut partial, ia, ja, buf.iter().map(|c| c.re * norm));
            if let Some((ib, jb)) = second {
                self.accumulate(&mut partial, ib, jb, buf.iter().map(|c| c.im * norm));
            }
        }
        partial
    }

    fn accumulate(
        &self,
        partial: &mut Partial,
        i: usize,
        j: usize,
        seq: impl Iterator<Item = f64>,
    ) {
        let target = if i == j {
            &mut partial.parts.diag
        } else {
            &mut partial.parts.nondiag
        };
        if self.keep_stack {
            let seq: Vec<f64> = seq.collect();
            for (acc, v) in target.iter_mut().zip(&seq) {
                *acc += v.abs();
            }
            partial.values.push((i, j, seq));
        } else {
            for (acc, v) in target.iter_mut().zip(seq) {
                *acc += v.abs();
            }
        }
        debug_assert!(i < self.d && j < self.d);
    }
}

/// All lag scores through FFT. By default only the per-lag score parts are
/// kept; [`FftOptions::keep_stack`] also returns every `M_l`.
pub fn xcorr_all_lags_fft(q_hat: &Matrix, k_hat: &Matrix, opts: FftOptions) -> Result<FftOutput> {
    check_pair(q_hat, k_hat, "xcorr_all_lags_fft")?;
    let (t_len, d) = q_hat.shape();
    if t_len < 2 {
        return Err(CabError::DegenerateLength(t_len));
    }
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(t_len);
    let inverse = planner.plan_fft_inverse(t_len);
    let q_spec = spectra(q_hat, &forward);
    let k_spec = spectra(k_hat, &forward);

    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).collect();
    let work = PairWork {
        q_spec: &q_spec,
        k_spec: &k_spec,
        inverse: &inverse,
        t_len,
        d,
        keep_stack: opts.keep_stack,
    };

    let threads = opts.threads.max(1).min(pairs.len().div_ceil(2));
    let partials: Vec<Partial> = if threads <= 1 {
        vec![work.run(&pairs)]
    } else {
        // Even chunk sizes keep the two-per-transform packing identical to
        // the serial order within each chunk.
        let per = pairs.len().div_ceil(threads).next_multiple_of(2);
        std::thread::scope(|s| {
            let handles: Vec<_> = pairs
                .chunks(per)
                .map(|chunk| {
                    let work = &work;
                    s.spawn(move || work.run(chunk))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("xcorr worker panicked"))
                .collect()
        })
    };

    let mut parts = LagParts::zeros(t_len);
    let mut stack = opts
        .keep_stack
        .then(|| vec![Matrix::zeros(d, d); t_len]);
    for partial in partials {
        for (acc, v) in parts.diag.iter_mut().zip(&partial.parts.diag) {
            *acc += v;
        }
        for (acc, v) in parts.nondiag.iter_mut().zip(&partial.parts.nondiag) {
            *acc += v;
        }
        if let Some(stack) = stack.as_mut() {
            for (i, j, seq) in partial.values {
                for (l, v) in seq.into_iter().enumerate() {
                    stack[l][(i, j)] = v;
                }
            }
        }
    }
    Ok(FftOutput { parts, stack })
}

/// Score parts for every lag through the chosen route.
pub fn lag_parts(q_hat: &Matrix, k_hat: &Matrix, path: LagPath, threads: usize) -> Result<LagParts> {
    match path {
        LagPath::Naive => Ok(LagParts::from_stack(&xcorr_all_lags_naive(q_hat, k_hat)?)),
        LagPath::Fft => Ok(xcorr_all_lags_fft(
            q_hat,
            k_hat,
            FftOptions {
                keep_stack: false,
                threads,
            },
        )?
        .parts),
    }
}

/// The chosen lags, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct LagSelection {
    pub lags: Vec<usize>,
    /// Combined score of each selected lag, aligned with `lags`.
    pub scores: Vec<f64>,
    pub c: usize,
}

impl LagSelection {
    pub fn k(&self) -> usize {
        self.lags.len()
    }
}

/// `k = c·⌈ln T⌉`, clamped to `[1, T − 1]`.
pub fn topk_count(t_len: usize, c: usize) -> usize {
    let base = (t_len as f64).ln().ceil().max(0.0) as usize;
    (c * base).max(1).min(t_len.saturating_sub(1))
}

/// Highest-scoring lags in `[1, T − 1]`; lag 0 is never selected. Scores equal
/// at [`TIE_RESOLUTION`] go to the smaller lag.
pub fn topk_lags(scores: &LagScoreVector, c: usize, t_len: usize) -> Result<LagSelection> {
    if t_len < 2 {
        return Err(CabError::DegenerateLength(t_len));
    }
    if c == 0 {
        return Err(CabError::Param("topk multiplier c must be at least 1".into()));
    }
    if scores.combined.len() != t_len {
        return Err(CabError::Param(format!(
            "score vector has {} lags, expected {t_len}",
            scores.combined.len()
        )));
    }
    let k = topk_count(t_len, c);
    let candidates = &scores.combined[1..];
    let scale = candidates.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let quantised = |s: f64| -> i64 { (s / scale / TIE_RESOLUTION).round() as i64 };

    let mut order: Vec<usize> = (1..t_len).collect();
    order.sort_by(|&a, &b| {
        quantised(scores.combined[b])
            .cmp(&quantised(scores.combined[a]))
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(LagSelection {
        scores: order.iter().map(|&l| scores.combined[l]).collect(),
        lags: order,
        c,
    })
}
