//! Mixture-of-head attention: the first `m` heads attend over time, the
//! remaining `h − m` are correlated attention heads, and all head outputs
//! share one output projection.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::correlated::{
    correlated_attention_backward, correlated_attention_forward, CabCache, CabConfig, CabScalars,
    LambdaMode,
};
use super::destat::DestatFactors;
use super::temporal::{
    destationary_attention_forward, self_attention_forward, temporal_backward, TemporalCache,
};
use crate::error::{CabError, Result};
use crate::numerics::ops::{logit, sigmoid, softplus, softplus_inverse};
use crate::numerics::{Matrix, Param};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Temporal,
    Correlated,
}

/// Mechanism used by the temporal heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TemporalKind {
    #[default]
    SelfAttention,
    Destationary,
}

impl FromStr for TemporalKind {
    type Err = CabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self" | "transformer" => Ok(Self::SelfAttention),
            "destationary" | "nonstationary" => Ok(Self::Destationary),
            other => Err(CabError::Config(format!("unknown temporal attention '{other}'"))),
        }
    }
}

impl fmt::Display for TemporalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SelfAttention => "transformer",
            Self::Destationary => "nonstationary",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureConfig {
    pub h: usize,
    /// Number of temporal heads; heads `0..m` are temporal.
    pub m: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub temporal: TemporalKind,
    pub cab: CabConfig,
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.d_model == 0 || self.d_k == 0 {
            return Err(CabError::Config(format!(
                "h, d_model and d_k must be positive (got {}, {}, {})",
                self.h, self.d_model, self.d_k
            )));
        }
        if self.m > self.h {
            return Err(CabError::Config(format!(
                "temporal head count m = {} exceeds h = {}",
                self.m, self.h
            )));
        }
        if self.cab.c == 0 {
            return Err(CabError::Config("lag multiplier c must be at least 1".into()));
        }
        Ok(())
    }

    pub fn kind_of(&self, head: usize) -> HeadKind {
        if head < self.m {
            HeadKind::Temporal
        } else {
            HeadKind::Correlated
        }
    }

    /// Number of scalar parameters in one mixture layer.
    pub fn param_count(&self) -> usize {
        let proj = 3 * self.d_model * self.d_k;
        self.h * proj + (self.h - self.m) * 3 + self.h * self.d_k * self.d_model
    }
}

/// Unconstrained CAB scalars: `λ = σ(λ_raw)`, `β = σ(β_raw)`, `τ = softplus(τ_raw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CabParams {
    pub lambda_raw: Param,
    pub beta_raw: Param,
    pub tau_raw: Param,
}

impl CabParams {
    pub fn new(prefix: &str, init: CabScalars) -> Self {
        Self {
            lambda_raw: Param::scalar(format!("{prefix}.lambda_raw"), logit(init.lambda)),
            beta_raw: Param::scalar(format!("{prefix}.beta_raw"), logit(init.beta)),
            tau_raw: Param::scalar(format!("{prefix}.tau_raw"), softplus_inverse(init.tau)),
        }
    }

    /// Decoded scalars as the block sees them; β is 0 when filtering is off.
    pub fn decode(&self, cfg: &CabConfig) -> CabScalars {
        CabScalars {
            lambda: sigmoid(self.lambda_raw.value.item()),
            beta: if cfg.filtering {
                sigmoid(self.beta_raw.value.item())
            } else {
                0.0
            },
            tau: softplus(self.tau_raw.value.item()),
        }
    }

    fn params(&self) -> [&Param; 3] {
        [&self.lambda_raw, &self.beta_raw, &self.tau_raw]
    }

    fn params_mut(&mut self) -> [&mut Param; 3] {
        [&mut self.lambda_raw, &mut self.beta_raw, &mut self.tau_raw]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub kind: HeadKind,
    pub w_q: Param,
    pub w_k: Param,
    pub w_v: Param,
    /// Present exactly for correlated heads.
    pub cab: Option<CabParams>,
}

impl HeadParams {
    pub fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.w_q, &self.w_k, &self.w_v];
        if let Some(c) = &self.cab {
            out.extend(c.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let Self {
            w_q, w_k, w_v, cab, ..
        } = self;
        let mut out = vec![w_q, w_k, w_v];
        if let Some(c) = cab {
            out.extend(c.params_mut());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub heads: Vec<HeadParams>,
    /// (h·d_k) × d_model.
    pub w_o: Param,
}

fn uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let a = (1.0 / fan_in as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

impl MixtureParams {
    /// Random projections; CAB scalars start at `cab_init`. λ is trainable only
    /// in learnable mode and β only when filtering is on.
    pub fn init(cfg: &MixtureConfig, prefix: &str, cab_init: CabScalars, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let heads = (0..cfg.h)
            .map(|i| {
                let name = format!("{prefix}.head{i}");
                let kind = cfg.kind_of(i);
                let cab = (kind == HeadKind::Correlated).then(|| {
                    let mut c = CabParams::new(&name, cab_init);
                    c.lambda_raw.trainable = cfg.cab.lambda_mode == LambdaMode::Learnable;
                    c.beta_raw.trainable = cfg.cab.filtering;
                    c
                });
                HeadParams {
                    kind,
                    w_q: Param::new(format!("{name}.w_q"), uniform(cfg.d_model, cfg.d_k, cfg.d_model, rng)),
                    w_k: Param::new(format!("{name}.w_k"), uniform(cfg.d_model, cfg.d_k, cfg.d_model, rng)),
                    w_v: Param::new(format!("{name}.w_v"), uniform(cfg.d_model, cfg.d_k, cfg.d_model, rng)),
                    cab,
                }
            })
            .collect();
        let width = cfg.h * cfg.d_k;
        Ok(Self {
            heads,
            w_o: Param::new(format!("{prefix}.w_o"), uniform(width, cfg.d_model, width, rng)),
        })
    }

    /// Checks head count, head order and every projection shape against `cfg`.
    pub fn validate(&self, cfg: &MixtureConfig) -> Result<()> {
        cfg.validate()?;
        if self.heads.len() != cfg.h {
            return Err(CabError::Config(format!(
                "expected {} heads, found {}",
                cfg.h,
                self.heads.len()
            )));
        }
        for (i, head) in self.heads.iter().enumerate() {
            let want = cfg.kind_of(i);
            if head.kind != want {
                return Err(CabError::Config(format!(
                    "head {i} is {:?} but the first m = {} heads must be temporal and the rest correlated",
                    head.kind, cfg.m
                )));
            }
            if (head.kind == HeadKind::Correlated) != head.cab.is_some() {
                return Err(CabError::Config(format!(
                    "head {i}: CAB scalars must be present exactly on correlated heads"
                )));
            }
            for w in [&head.w_q, &head.w_k, &head.w_v] {
                if w.value.shape() != (cfg.d_model, cfg.d_k) {
                    return Err(CabError::Config(format!(
                        "{} has shape {:?}, expected {:?}",
                        w.name,
                        w.value.shape(),
                        (cfg.d_model, cfg.d_k)
                    )));
                }
            }
        }
        if self.w_o.value.shape() != (cfg.h * cfg.d_k, cfg.d_model) {
            return Err(CabError::Config(format!(
                "output projection has shape {:?}, expected {:?}",
                self.w_o.value.shape(),
                (cfg.h * cfg.d_k, cfg.d_model)
            )));
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.heads.iter().flat_map(|h| h.params()).collect();
        out.push(&self.w_o);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let Self { heads, w_o } = self;
        let mut out: Vec<&mut Param> = heads.iter_mut().flat_map(|h| h.params_mut()).collect();
        out.push(w_o);
        out
    }
}

#[derive(Debug, Clone)]
enum HeadCache {
    Temporal(TemporalCache),
    Correlated(Box<CabCache>),
}

#[derive(Debug, Clone)]
pub struct MixtureCache {
    x: Matrix,
    heads: Vec<HeadCache>,
    concat: Matrix,
}

impl MixtureCache {
    /// Lags used by each head (empty for temporal heads). Feeding this back as
    /// `frozen_lags` reproduces the same forward pass with selection held fixed.
    pub fn lag_plan(&self) -> Vec<Vec<usize>> {
        self.heads
            .iter()
            .map(|h| match h {
                HeadCache::Temporal(_) => Vec::new(),
                HeadCache::Correlated(c) => c.lags(),
            })
            .collect()
    }

    pub fn cab_cache(&self, head: usize) -> Option<&CabCache> {
        match self.heads.get(head)? {
            HeadCache::Correlated(c) => Some(c),
            HeadCache::Temporal(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixtureGrad {
    pub dx: Matrix,
    /// Summed over the temporal heads; zero unless they are de-stationary.
    pub dxi: f64,
    pub ddelta: Option<Vec<f64>>,
}

fn temporal_head(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    kind: TemporalKind,
    destat: Option<&DestatFactors>,
) -> Result<(Matrix, TemporalCache)> {
    match kind {
        TemporalKind::SelfAttention => self_attention_forward(q, k, v),
        TemporalKind::Destationary => {
            let f = destat.ok_or_else(|| {
                CabError::Config("de-stationary heads need de-stationary factors".into())
            })?;
            destationary_attention_forward(q, k, v, f.xi, &f.delta)
        }
    }
}

pub fn mixture_of_head_forward(
    x: &Matrix,
    cfg: &MixtureConfig,
    params: &MixtureParams,
    destat: Option<&DestatFactors>,
    frozen_lags: Option<&[Vec<usize>]>,
) -> Result<(Matrix, MixtureCache)> {
    params.validate(cfg)?;
    if x.cols() != cfg.d_model {
        return Err(CabError::Shape {
            op: "mixture_of_head input",
            left: x.shape(),
            right: (x.rows(), cfg.d_model),
        });
    }
    if let Some(plan) = frozen_lags {
        if plan.len() != cfg.h {
            return Err(CabError::Config(format!(
                "frozen lag plan covers {} heads, expected {}",
                plan.len(),
                cfg.h
            )));
        }
    }
    let mut outs = Vec::with_capacity(cfg.h);
    let mut caches = Vec::with_capacity(cfg.h);
    for (i, head) in params.heads.iter().enumerate() {
        let q = x.matmul(&head.w_q.value)?;
        let k = x.matmul(&head.w_k.value)?;
        let v = x.matmul(&head.w_v.value)?;
        match &head.cab {
            None => {
                let (o, c) = temporal_head(&q, &k, &v, cfg.temporal, destat)?;
                outs.push(o);
                caches.push(HeadCache::Temporal(c));
            }
            Some(cab) => {
                let frozen = frozen_lags.map(|p| p[i].as_slice());
                let scalars = cab.decode(&cfg.cab);
                // A raw value driven far negative by a diverging update
                // decodes to τ = 0 (or NaN).
                if !(scalars.tau > 0.0 && scalars.tau.is_finite()) {
                    return Err(CabError::NonFinite(format!(
                        "temperature of head {i} decoded to {}",
                        scalars.tau
                    )));
                }
                let (o, c) = correlated_attention_forward(&q, &k, &v, scalars, &cfg.cab, frozen)?;
                outs.push(o);
                caches.push(HeadCache::Correlated(Box::new(c)));
            }
        }
    }
    let concat = Matrix::hconcat(&outs)?;
    let out = concat.matmul(&params.w_o.value)?;
    Ok((
        out,
        MixtureCache {
            x: x.clone(),
            heads: caches,
            concat,
        },
    ))
}

pub fn mixture_of_head(
    x: &Matrix,
    cfg: &MixtureConfig,
    params: &MixtureParams,
    destat: Option<&DestatFactors>,
) -> Result<Matrix> {
    Ok(mixture_of_head_forward(x, cfg, params, destat, None)?.0)
}

/// Accumulates parameter gradients into `params` and returns the input adjoint.
pub fn mixture_of_head_backward(
    cache: &MixtureCache,
    cfg: &MixtureConfig,
    params: &mut MixtureParams,
    dout: &Matrix,
) -> Result<MixtureGrad> {
    params.w_o.grad.add_assign(&cache.concat.matmul_tn(dout)?)?;
    let dconcat = dout.matmul_nt(&params.w_o.value)?;
    let x = &cache.x;
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    let mut dxi = 0.0;
    let mut ddelta: Option<Vec<f64>> = None;
    for (i, (head, hc)) in params.heads.iter_mut().zip(&cache.heads).enumerate() {
        let dhead = dconcat.col_block(i * cfg.d_k, cfg.d_k);
        let (dq, dk, dv) = match hc {
            HeadCache::Temporal(c) => {
                let g = temporal_backward(c, &dhead)?;
                if let Some(dd) = g.ddelta {
                    dxi += g.dxi;
                    match &mut ddelta {
                        Some(acc) => acc.iter_mut().zip(&dd).for_each(|(a, b)| *a += b),
                        None => ddelta = Some(dd),
                    }
                }
                (g.dq, g.dk, g.dv)
            }
            HeadCache::Correlated(c) => {
                let g = correlated_attention_backward(c, &dhead)?;
                let cab = head
                    .cab
                    .as_mut()
                    .ok_or_else(|| CabError::Config(format!("head {i} lost its CAB scalars")))?;
                let s = cab.decode(&cfg.cab);
                if cfg.cab.lambda_mode == LambdaMode::Learnable {
                    cab.lambda_raw.grad.as_mut_slice()[0] += g.dlambda * s.lambda * (1.0 - s.lambda);
                }
                if cfg.cab.filtering {
                    cab.beta_raw.grad.as_mut_slice()[0] += g.dbeta * s.beta * (1.0 - s.beta);
                }
                cab.tau_raw.grad.as_mut_slice()[0] += g.dtau * sigmoid(cab.tau_raw.value.item());
                (g.dq, g.dk, g.dv)
            }
        };
        for (w, d) in [(&mut head.w_q, &dq), (&mut head.w_k, &dk), (&mut head.w_v, &dv)] {
            w.grad.add_assign(&x.matmul_tn(d)?)?;
            dx.add_assign(&d.matmul_nt(&w.value)?)?;
        }
    }
    Ok(MixtureGrad { dx, dxi, ddelta })
}

/// Plain multi-head attention over time: every head is temporal.
pub fn multi_head_attention(
    x: &Matrix,
    heads: &[HeadParams],
    w_o: &Matrix,
    kind: TemporalKind,
    destat: Option<&DestatFactors>,
) -> Result<Matrix> {
    let outs = heads
        .iter()
        .map(|h| {
            let q = x.matmul(&h.w_q.value)?;
            let k = x.matmul(&h.w_k.value)?;
            let v = x.matmul(&h.w_v.value)?;
            Ok(temporal_head(&q, &k, &v, kind, destat)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::hconcat(&outs)?.matmul(w_o)
}
