//! Layer normalization, the position-wise feed-forward map and positional
//! encoding.

use crate::error::Result;
use crate::numerics::ops::{gelu, gelu_derivative};
use crate::numerics::{Matrix, Param};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Param,
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(prefix: &str, width: usize) -> Self {
        Self {
            gain: Param::new(format!("{prefix}.gain"), Matrix::filled(1, width, 1.0)),
            bias: Param::new(format!("{prefix}.bias"), Matrix::zeros(1, width)),
        }
    }

    /// Normalizes each row over its features.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LayerNormCache)> {
        let (rows, cols) = x.shape();
        let mut normalized = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for t in 0..rows {
            let row = x.row(t);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in normalized.row_mut(t).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let g = self.gain.value.row(0);
        let b = self.bias.value.row(0);
        let out = Matrix::from_fn(rows, cols, |t, j| normalized[(t, j)] * g[j] + b[j]);
        Ok((out, LayerNormCache { normalized, inv_std }))
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Matrix) -> Result<Matrix> {
        let (rows, cols) = dy.shape();
        self.bias.grad.add_assign(&dy.col_sums())?;
        self.gain.grad.add_assign(&dy.hadamard(&cache.normalized)?.col_sums())?;
        let g = self.gain.value.row(0);
        let mut dx = Matrix::zeros(rows, cols);
        let n = cols as f64;
        for t in 0..rows {
            let xh = cache.normalized.row(t);
            let dxh: Vec<f64> = dy.row(t).iter().zip(g).map(|(d, g)| d * g).collect();
            let mean_d = dxh.iter().sum::<f64>() / n;
            let mean_dx = dxh.iter().zip(xh).map(|(d, x)| d * x).sum::<f64>() / n;
            for (j, o) in dx.row_mut(t).iter_mut().enumerate() {
                *o = cache.inv_std[t] * (dxh[j] - mean_d - xh[j] * mean_dx);
            }
        }
        Ok(dx)
    }
}

/// `GELU(x·W1 + b1)·W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    input: Matrix,
    pre: Matrix,
    hidden: Matrix,
}

impl FeedForward {
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, FeedForwardCache)> {
        let pre = x.matmul(&self.w1.value)?.add_row_broadcast(&self.b1.value)?;
        let hidden = pre.map(gelu);
        let out = hidden.matmul(&self.w2.value)?.add_row_broadcast(&self.b2.value)?;
        Ok((
            out,
            FeedForwardCache {
                input: x.clone(),
                pre,
                hidden,
            },
        ))
    }

    pub fn backward(&mut self, cache: &FeedForwardCache, dy: &Matrix) -> Result<Matrix> {
        self.b2.grad.add_assign(&dy.col_sums())?;
        self.w2.grad.add_assign(&cache.hidden.matmul_tn(dy)?)?;
        let dh = dy.matmul_nt(&self.w2.value)?;
        let dpre = dh.zip_with(&cache.pre, "gelu backward", |g, p| g * gelu_derivative(p))?;
        self.b1.grad.add_assign(&dpre.col_sums())?;
        self.w1.grad.add_assign(&cache.input.matmul_tn(&dpre)?)?;
        dpre.matmul_nt(&self.w1.value)
    }

    pub fn params(&self) -> [&Param; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Sinusoidal positional encoding, `T × width`.
pub fn positional_encoding(t_len: usize, width: usize) -> Matrix {
    Matrix::from_fn(t_len, width, |t, j| {
        let pair = (j / 2) as f64;
        let angle = t as f64 / 10_000f64.powf(2.0 * pair / width as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
