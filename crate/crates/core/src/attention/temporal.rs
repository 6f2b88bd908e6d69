//! Attention along the time axis: scaled dot-product self-attention and
//! de-stationary attention.

use crate::error::{CabError, Result};
use crate::numerics::{softmax_rows, softmax_rows_backward, Matrix};

/// Forward state kept for the backward pass of either temporal mechanism.
#[derive(Debug, Clone)]
pub struct TemporalCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Row-stochastic attention weights, T_q × T_k.
    weights: Matrix,
    /// Unscaled `Q Kᵀ`, only kept for de-stationary attention.
    raw_scores: Option<Matrix>,
    xi: f64,
}

impl TemporalCache {
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }
}

#[derive(Debug, Clone)]
pub struct TemporalGrad {
    pub dq: Matrix,
    pub dk: Matrix,
    pub dv: Matrix,
    pub dxi: f64,
    /// Length T_k, present for de-stationary attention.
    pub ddelta: Option<Vec<f64>>,
}

fn check_qkv(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<()> {
    if q.cols() != k.cols() {
        return Err(CabError::Shape {
            op: "attention(q, k)",
            left: q.shape(),
            right: k.shape(),
        });
    }
    if k.rows() != v.rows() {
        return Err(CabError::Shape {
            op: "attention(k, v)",
            left: k.shape(),
            right: v.shape(),
        });
    }
    Ok(())
}

/// `softmax(Q Kᵀ / √d_k) V`, softmax over the key (time) axis.
pub fn self_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    Ok(self_attention_forward(q, k, v)?.0)
}

pub fn self_attention_forward(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<(Matrix, TemporalCache)> {
    check_qkv(q, k, v)?;
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let scores = q.matmul_nt(k)?.scale(scale);
    let weights = softmax_rows(&scores);
    let out = weights.matmul(v)?;
    Ok((
        out,
        TemporalCache {
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
            weights,
            raw_scores: None,
            xi: 1.0,
        },
    ))
}

/// `softmax((ξ Q′K′ᵀ + 1Δᵀ) / √d_k) V′`.
pub fn destationary_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    xi: f64,
    delta: &[f64],
) -> Result<Matrix> {
    Ok(destationary_attention_forward(q, k, v, xi, delta)?.0)
}

pub fn destationary_attention_forward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    xi: f64,
    delta: &[f64],
) -> Result<(Matrix, TemporalCache)> {
    check_qkv(q, k, v)?;
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(CabError::Param(format!("de-stationary scale must be positive, got {xi}")));
    }
    if delta.len() != k.rows() {
        return Err(CabError::Param(format!(
            "shift vector has length {}, expected {}",
            delta.len(),
            k.rows()
        )));
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let raw = q.matmul_nt(k)?;
    let mut scores = raw.scale(xi);
    for t in 0..scores.rows() {
        for (s, d) in scores.row_mut(t).iter_mut().zip(delta) {
            *s = (*s + d) * scale;
        }
    }
    let weights = softmax_rows(&scores);
    let out = weights.matmul(v)?;
    Ok((
        out,
        TemporalCache {
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
            weights,
            raw_scores: Some(raw),
            xi,
        },
    ))
}

/// Adjoint of either temporal mechanism.
pub fn temporal_backward(cache: &TemporalCache, dout: &Matrix) -> Result<TemporalGrad> {
    let scale = 1.0 / (cache.q.cols() as f64).sqrt();
    let dv = cache.weights.matmul_tn(dout)?;
    let dweights = dout.matmul_nt(&cache.v)?;
    // Gradient w.r.t. the pre-scale logits.
    let dlogits = softmax_rows_backward(&cache.weights, &dweights)?.scale(scale);
    let dq = dlogits.matmul(&cache.k)?.scale(cache.xi);
    let dk = dlogits.matmul_tn(&cache.q)?.scale(cache.xi);
    let (dxi, ddelta) = match &cache.raw_scores {
        Some(raw) => (dlogits.dot(raw)?, Some(dlogits.col_sums().into_vec())),
        None => (0.0, None),
    };
    Ok(TemporalGrad {
        dq,
        dk,
        dv,
        dxi,
        ddelta,
    })
}
