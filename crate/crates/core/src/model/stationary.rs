//! Per-feature standardization with stored statistics.

use crate::error::{CabError, Result};
use crate::numerics::Matrix;

/// Floor applied to every per-feature standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// `X′ = (X − 1μᵀ)/σ` with population statistics over time.
pub fn stationarize(x: &Matrix) -> (Matrix, StationaryStats) {
    stationarize_observed(x, None).expect("an unmasked series always has observations")
}

/// As [`stationarize`], but statistics only use entries with `mask == 1`;
/// hidden entries of the result are set to 0.
pub fn stationarize_observed(x: &Matrix, mask: Option<&Matrix>) -> Result<(Matrix, StationaryStats)> {
    if let Some(m) = mask {
        x.ensure_same_shape(m, "stationarize(mask)")?;
    }
    let (t_len, d) = x.shape();
    let seen = |t: usize, j: usize| mask.is_none_or(|m| m[(t, j)] != 0.0);
    let mut mu = vec![0.0; d];
    let mut sigma = vec![0.0; d];
    for j in 0..d {
        let vals: Vec<f64> = (0..t_len).filter(|&t| seen(t, j)).map(|t| x[(t, j)]).collect();
        if vals.is_empty() {
            return Err(CabError::DegenerateTask(format!("feature {j} has no observed entries")));
        }
        let n = vals.len() as f64;
        mu[j] = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mu[j]).powi(2)).sum::<f64>() / n;
        sigma[j] = var.sqrt().max(SIGMA_FLOOR);
    }
    let out = Matrix::from_fn(t_len, d, |t, j| {
        if seen(t, j) {
            (x[(t, j)] - mu[j]) / sigma[j]
        } else {
            0.0
        }
    });
    Ok((out, StationaryStats { mu, sigma }))
}

/// Inverse of [`stationarize`]: `X = X′·σ + 1μᵀ`.
pub fn destationarize(x: &Matrix, stats: &StationaryStats) -> Result<Matrix> {
    if stats.mu.len() != x.cols() || stats.sigma.len() != x.cols() {
        return Err(CabError::Shape {
            op: "destationarize",
            left: x.shape(),
            right: (1, stats.mu.len()),
        });
    }
    Ok(Matrix::from_fn(x.rows(), x.cols(), |t, j| {
        x[(t, j)] * stats.sigma[j] + stats.mu[j]
    }))
}
