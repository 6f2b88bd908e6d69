//! Forward kernels and their adjoints.
//!
//! Every forward op that takes part in training has a `*_backward` partner
//! mapping an output cotangent to input cotangents.

use crate::error::{CabError, Result};
use crate::numerics::Matrix;

/// Floor on column norms in [`l2_normalize_cols`].
pub const L2_EPSILON: f64 = 1e-8;

/// `(dA, dB)` for `C = A·B` given `dC`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, dc: &Matrix) -> Result<(Matrix, Matrix)> {
    Ok((dc.matmul_nt(b)?, a.matmul_tn(dc)?))
}

/// Column-stochastic softmax of `a / temperature`: every column sums to one.
pub fn softmax_cols(a: &Matrix, temperature: f64) -> Result<Matrix> {
    check_temperature(temperature)?;
    let (rows, cols) = a.shape();
    let mut out = Matrix::zeros(rows, cols);
    let mut column = vec![0.0; rows];
    for j in 0..cols {
        let max = (0..rows).fold(f64::NEG_INFINITY, |m, i| m.max(a[(i, j)]));
        let mut total = 0.0;
        for (i, slot) in column.iter_mut().enumerate() {
            *slot = ((a[(i, j)] - max) / temperature).exp();
            total += *slot;
        }
        for (i, v) in column.iter().enumerate() {
            out[(i, j)] = v / total;
        }
    }
    Ok(out)
}

/// Cotangents of [`softmax_cols`].
#[derive(Debug, Clone)]
pub struct SoftmaxGrad {
    pub input: Matrix,
    pub temperature: f64,
}

/// Adjoint of [`softmax_cols`], given the forward input `a`, its output `y`,
/// and the output cotangent `dy`.
pub fn softmax_cols_backward(
    a: &Matrix,
    y: &Matrix,
    dy: &Matrix,
    temperature: f64,
) -> Result<SoftmaxGrad> {
    y.ensure_same_shape(dy, "softmax_cols_backward")?;
    let (rows, cols) = y.shape();
    let mut da = Matrix::zeros(rows, cols);
    for j in 0..cols {
        let inner: f64 = (0..rows).map(|i| y[(i, j)] * dy[(i, j)]).sum();
        for i in 0..rows {
            da[(i, j)] = y[(i, j)] * (dy[(i, j)] - inner) / temperature;
        }
    }
    let dtemp = -da.dot(a)? / temperature;
    Ok(SoftmaxGrad {
        input: da,
        temperature: dtemp,
    })
}

/// Row-stochastic softmax (no temperature; callers pre-scale).
pub fn softmax_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for t in 0..out.rows() {
        let row = out.row_mut(t);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

pub fn softmax_rows_backward(y: &Matrix, dy: &Matrix) -> Result<Matrix> {
    y.ensure_same_shape(dy, "softmax_rows_backward")?;
    let mut da = Matrix::zeros(y.rows(), y.cols());
    for t in 0..y.rows() {
        let (yr, dyr) = (y.row(t), dy.row(t));
        let inner: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for (o, (a, b)) in da.row_mut(t).iter_mut().zip(yr.iter().zip(dyr)) {
            *o = a * (b - inner);
        }
    }
    Ok(da)
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(CabError::Param(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(CabError::Param(format!(
            "normalization epsilon must be positive, got {epsilon}"
        )));
    }
    Ok(())
}

/// Divides each column by `max(‖column‖₂, epsilon)`.
pub fn l2_normalize_cols(a: &Matrix, epsilon: f64) -> Result<Matrix> {
    check_epsilon(epsilon)?;
    let norms = col_norms(a);
    Ok(Matrix::from_fn(a.rows(), a.cols(), |t, j| {
        a[(t, j)] / norms[j].max(epsilon)
    }))
}

/// Adjoint of [`l2_normalize_cols`] at input `a`.
pub fn l2_normalize_cols_backward(a: &Matrix, dy: &Matrix, epsilon: f64) -> Result<Matrix> {
    check_epsilon(epsilon)?;
    a.ensure_same_shape(dy, "l2_normalize_cols_backward")?;
    let norms = col_norms(a);
    let mut da = Matrix::zeros(a.rows(), a.cols());
    for (j, &norm) in norms.iter().enumerate() {
        if norm > epsilon {
            // y = a / n, dA = (dy - y (y·dy)) / n
            let proj: f64 = (0..a.rows()).map(|t| a[(t, j)] * dy[(t, j)]).sum::<f64>() / norm;
            for t in 0..a.rows() {
                let y = a[(t, j)] / norm;
                da[(t, j)] = (dy[(t, j)] - y * proj) / norm;
            }
        } else {
            for t in 0..a.rows() {
                da[(t, j)] = dy[(t, j)] / epsilon;
            }
        }
    }
    Ok(da)
}

pub fn col_norms(a: &Matrix) -> Vec<f64> {
    let mut sq = vec![0.0; a.cols()];
    for t in 0..a.rows() {
        for (s, v) in sq.iter_mut().zip(a.row(t)) {
            *s += v * v;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Circular shift down the time axis: `out(t, j) = a((t - lag) mod T, j)`.
pub fn roll(a: &Matrix, lag: usize) -> Result<Matrix> {
    let rows = a.rows();
    if lag >= rows {
        return Err(CabError::Param(format!(
            "lag {lag} out of range for {rows} time steps"
        )));
    }
    Ok(roll_unchecked(a, lag))
}

pub(crate) fn roll_unchecked(a: &Matrix, lag: usize) -> Matrix {
    let (rows, cols) = a.shape();
    let mut out = Matrix::zeros(rows, cols);
    for t in 0..rows {
        let src = (t + rows - lag % rows) % rows;
        out.row_mut(t).copy_from_slice(a.row(src));
    }
    out
}

/// Adjoint of [`roll`]: the inverse permutation.
pub fn roll_backward(dy: &Matrix, lag: usize) -> Result<Matrix> {
    let rows = dy.rows();
    if lag >= rows {
        return Err(CabError::Param(format!(
            "lag {lag} out of range for {rows} time steps"
        )));
    }
    Ok(roll_unchecked(dy, (rows - lag) % rows))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Inverse of [`sigmoid`] for `p` in `(0, 1)`.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}
