//! Encoder-only network: stationarized input, linear embedding, post-norm
//! encoder blocks with mixture-of-head attention, and a task head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{positional_encoding, FeedForward, FeedForwardCache, LayerNorm, LayerNormCache};
use super::stationary::{stationarize_observed, StationaryStats};
use super::task::{cross_entropy, hidden_weights, masked_mse};
use crate::attention::{
    mixture_of_head_backward, mixture_of_head_forward, CabScalars, DestatCache, DestatFactors,
    DestatParams, MixtureCache, MixtureConfig, MixtureParams, TemporalKind,
};
use crate::error::{CabError, Result};
use crate::numerics::{Matrix, Param, ParamSet};
use crate::synthdata::{SeriesSample, Task};

/// Lags per block, per head (empty for temporal heads).
pub type LagPlan = Vec<Vec<Vec<usize>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    pub seq_len: usize,
    pub d_in: usize,
    /// Number of classes; only used for classification.
    pub classes: usize,
    pub blocks: usize,
    pub d_ff: usize,
    pub positional: bool,
    pub mixture: MixtureConfig,
    /// Initial CAB scalars.
    pub cab_init: CabScalars,
    /// Whether β is trained (it is never trained when filtering is off).
    pub learn_beta: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.mixture.validate()?;
        if self.seq_len < 2 || self.d_in == 0 || self.d_ff == 0 {
            return Err(CabError::Config(format!(
                "need seq_len >= 2, d_in >= 1 and d_ff >= 1 (got {}, {}, {})",
                self.seq_len, self.d_in, self.d_ff
            )));
        }
        if self.task == Task::Classification && self.classes < 2 {
            return Err(CabError::Config("classification needs at least 2 classes".into()));
        }
        Ok(())
    }

    pub fn d_model(&self) -> usize {
        self.mixture.d_model
    }

    pub fn head_outputs(&self) -> usize {
        match self.task {
            Task::Classification => self.classes,
            Task::Imputation | Task::Anomaly => self.d_in,
        }
    }

    /// Hidden width of the de-stationary projectors.
    pub fn destat_hidden(&self) -> usize {
        2 * self.d_model()
    }

    /// Closed-form number of scalar parameters:
    ///
    /// ```text
    /// d_in·D                                       embedding
    /// + [destat] (2·d_in·H + H + H + 1) + (2·d_in·H + H + H·T + T),  H = 2·D
    /// + N·( 3·h·D·d_k + 3·(h − m) + h·d_k·D        attention
    ///       + 2·D·d_ff + d_ff + D                  feed-forward
    ///       + 4·D )                                two layer norms
    /// + D·o + o                                    head, o = d_in or classes
    /// ```
    pub fn param_count(&self) -> usize {
        let d = self.d_model();
        let destat = if self.mixture.temporal == TemporalKind::Destationary && self.mixture.m > 0 {
            let h = self.destat_hidden();
            let i = 2 * self.d_in;
            (i * h + 2 * h + 1) + (i * h + h + h * self.seq_len + self.seq_len)
        } else {
            0
        };
        let block = self.mixture.param_count() + 2 * d * self.d_ff + self.d_ff + d + 4 * d;
        let o = self.head_outputs();
        self.d_in * d + destat + self.blocks * block + d * o + o
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub attention: MixtureParams,
    pub norm1: LayerNorm,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embed: Param,
    pub destat: Option<DestatParams>,
    pub blocks: Vec<BlockParams>,
    pub head_w: Param,
    pub head_b: Param,
}

fn uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let a = (1.0 / fan_in as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model();
        let embed = Param::new("embed", uniform(cfg.d_in, d, cfg.d_in, &mut rng));
        let destat = (cfg.mixture.temporal == TemporalKind::Destationary && cfg.mixture.m > 0)
            .then(|| DestatParams::init(cfg.d_in, cfg.seq_len, cfg.destat_hidden(), &mut rng));
        let blocks = (0..cfg.blocks)
            .map(|b| {
                let prefix = format!("block{b}");
                let mut attention =
                    MixtureParams::init(&cfg.mixture, &format!("{prefix}.attn"), cfg.cab_init, &mut rng)?;
                if !cfg.learn_beta {
                    for head in &mut attention.heads {
                        if let Some(cab) = &mut head.cab {
                            cab.beta_raw.trainable = false;
                        }
                    }
                }
                Ok(BlockParams {
                    attention,
                    norm1: LayerNorm::new(&format!("{prefix}.norm1"), d),
                    ff: FeedForward {
                        w1: Param::new(format!("{prefix}.ff.w1"), uniform(d, cfg.d_ff, d, &mut rng)),
                        b1: Param::new(format!("{prefix}.ff.b1"), Matrix::zeros(1, cfg.d_ff)),
                        w2: Param::new(format!("{prefix}.ff.w2"), uniform(cfg.d_ff, d, cfg.d_ff, &mut rng)),
                        b2: Param::new(format!("{prefix}.ff.b2"), Matrix::zeros(1, d)),
                    },
                    norm2: LayerNorm::new(&format!("{prefix}.norm2"), d),
                })
            })
            .collect::<Result<_>>()?;
        let o = cfg.head_outputs();
        Ok(Self {
            embed,
            destat,
            blocks,
            head_w: Param::new("head.w", uniform(d, o, d, &mut rng)),
            head_b: Param::new("head.b", Matrix::zeros(1, o)),
        })
    }
}

impl ParamSet for ModelParams {
    fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.embed];
        if let Some(ds) = &self.destat {
            out.extend(ds.params());
        }
        for b in &self.blocks {
            out.extend(b.attention.params());
            out.extend([&b.norm1.gain, &b.norm1.bias]);
            out.extend(b.ff.params());
            out.extend([&b.norm2.gain, &b.norm2.bias]);
        }
        out.extend([&self.head_w, &self.head_b]);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let Self {
            embed,
            destat,
            blocks,
            head_w,
            head_b,
        } = self;
        let mut out = vec![embed];
        if let Some(ds) = destat {
            out.extend(ds.params_mut());
        }
        for b in blocks {
            let BlockParams {
                attention,
                norm1,
                ff,
                norm2,
            } = b;
            out.extend(attention.params_mut());
            out.extend([&mut norm1.gain, &mut norm1.bias]);
            out.extend(ff.params_mut());
            out.extend([&mut norm2.gain, &mut norm2.bias]);
        }
        out.extend([head_w, head_b]);
        out
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    attention: MixtureCache,
    norm1: LayerNormCache,
    ff: FeedForwardCache,
    norm2: LayerNormCache,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    input: Matrix,
    destat: Option<(DestatFactors, DestatCache)>,
    blocks: Vec<BlockCache>,
}

impl EncoderCache {
    pub fn lag_plan(&self) -> LagPlan {
        self.blocks.iter().map(|b| b.attention.lag_plan()).collect()
    }

    pub fn destat_factors(&self) -> Option<&DestatFactors> {
        self.destat.as_ref().map(|(f, _)| f)
    }
}

/// Runs embedding and encoder blocks on an already stationarized input and
/// returns the `T × d_model` representation. `stats` feeds the de-stationary
/// projectors when the temporal heads need them.
pub fn encoder_forward(
    x: &Matrix,
    params: &ModelParams,
    cfg: &ModelConfig,
    stats: Option<&StationaryStats>,
    frozen: Option<&LagPlan>,
) -> Result<(Matrix, EncoderCache)> {
    if x.cols() != cfg.d_in {
        return Err(CabError::Shape {
            op: "encoder input",
            left: x.shape(),
            right: (x.rows(), cfg.d_in),
        });
    }
    if params.blocks.len() != cfg.blocks {
        return Err(CabError::Config(format!(
            "parameters hold {} blocks, config expects {}",
            params.blocks.len(),
            cfg.blocks
        )));
    }
    let destat = match (&params.destat, stats) {
        (Some(ds), Some(s)) => Some(ds.forward(&s.sigma, &s.mu)?),
        (Some(_), None) => {
            return Err(CabError::Config("de-stationary heads need series statistics".into()))
        }
        (None, _) => None,
    };
    let mut h = x.matmul(&params.embed.value)?;
    if cfg.positional {
        h.add_assign(&positional_encoding(x.rows(), cfg.d_model()))?;
    }
    let factors = destat.as_ref().map(|(f, _)| f);
    let mut caches = Vec::with_capacity(params.blocks.len());
    for (b, block) in params.blocks.iter().enumerate() {
        let plan = frozen.map(|p| p[b].as_slice());
        let (a, attention) = mixture_of_head_forward(&h, &cfg.mixture, &block.attention, factors, plan)?;
        let (h1, norm1) = block.norm1.forward(&h.add(&a)?)?;
        let (f, ff) = block.ff.forward(&h1)?;
        let (h2, norm2) = block.norm2.forward(&h1.add(&f)?)?;
        caches.push(BlockCache {
            attention,
            norm1,
            ff,
            norm2,
        });
        h = h2;
    }
    Ok((
        h,
        EncoderCache {
            input: x.clone(),
            destat,
            blocks: caches,
        },
    ))
}

/// Accumulates parameter gradients given `∂L/∂repr`.
pub fn encoder_backward(params: &mut ModelParams, cfg: &ModelConfig, cache: &EncoderCache, drepr: &Matrix) -> Result<()> {
    let mut dh = drepr.clone();
    let mut dxi = 0.0;
    let mut ddelta = vec![0.0; cfg.seq_len];
    for (block, bc) in params.blocks.iter_mut().zip(&cache.blocks).rev() {
        let dsum2 = block.norm2.backward(&bc.norm2, &dh)?;
        let mut dh1 = block.ff.backward(&bc.ff, &dsum2)?;
        dh1.add_assign(&dsum2)?;
        let dsum1 = block.norm1.backward(&bc.norm1, &dh1)?;
        let g = mixture_of_head_backward(&bc.attention, &cfg.mixture, &mut block.attention, &dsum1)?;
        dxi += g.dxi;
        if let Some(dd) = g.ddelta {
            ddelta.iter_mut().zip(&dd).for_each(|(a, b)| *a += b);
        }
        dh = g.dx;
        dh.add_assign(&dsum1)?;
    }
    params.embed.grad.add_assign(&cache.input.matmul_tn(&dh)?)?;
    if let (Some(ds), Some((_, dc))) = (params.destat.as_mut(), &cache.destat) {
        ds.backward(dc, dxi, &ddelta)?;
    }
    Ok(())
}

/// Full forward state for one sample.
#[derive(Debug, Clone)]
pub struct ModelCache {
    pub stats: StationaryStats,
    encoder: EncoderCache,
    repr: Matrix,
}

impl ModelCache {
    pub fn lag_plan(&self) -> LagPlan {
        self.encoder.lag_plan()
    }

    pub fn encoder(&self) -> &EncoderCache {
        &self.encoder
    }
}

/// Model output: the reconstruction in the original scale (`T × d_in`) or
/// class logits (`1 × classes`).
pub fn forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    values: &Matrix,
    mask: Option<&Matrix>,
    frozen: Option<&LagPlan>,
) -> Result<(Matrix, ModelCache)> {
    let (x, stats) = stationarize_observed(values, mask)?;
    let (repr, encoder) = encoder_forward(&x, params, cfg, Some(&stats), frozen)?;
    let out = match cfg.task {
        Task::Classification => repr
            .col_means()
            .matmul(&params.head_w.value)?
            .add(&params.head_b.value)?,
        Task::Imputation | Task::Anomaly => {
            let y = repr.matmul(&params.head_w.value)?.add_row_broadcast(&params.head_b.value)?;
            Matrix::from_fn(y.rows(), y.cols(), |t, j| y[(t, j)] * stats.sigma[j] + stats.mu[j])
        }
    };
    Ok((out, ModelCache { stats, encoder, repr }))
}

/// Accumulates parameter gradients given `∂L/∂output`.
pub fn backward(params: &mut ModelParams, cfg: &ModelConfig, cache: &ModelCache, dout: &Matrix) -> Result<()> {
    let drepr = match cfg.task {
        Task::Classification => {
            let pooled = cache.repr.col_means();
            params.head_w.grad.add_assign(&pooled.matmul_tn(dout)?)?;
            params.head_b.grad.add_assign(dout)?;
            let dpooled = dout.matmul_nt(&params.head_w.value)?;
            let t = cache.repr.rows();
            Matrix::from_fn(t, dpooled.cols(), |_, j| dpooled[(0, j)] / t as f64)
        }
        Task::Imputation | Task::Anomaly => {
            let sigma = &cache.stats.sigma;
            let dy = Matrix::from_fn(dout.rows(), dout.cols(), |t, j| dout[(t, j)] * sigma[j]);
            params.head_w.grad.add_assign(&cache.repr.matmul_tn(&dy)?)?;
            params.head_b.grad.add_assign(&dy.col_sums())?;
            dy.matmul_nt(&params.head_w.value)?
        }
    };
    encoder_backward(params, cfg, &cache.encoder, &drepr)
}

/// Loss of one sample and its gradient w.r.t. the model output.
pub fn sample_loss(output: &Matrix, sample: &SeriesSample, task: Task) -> Result<(f64, Matrix)> {
    match task {
        Task::Imputation => {
            let mask = sample
                .mask
                .as_ref()
                .ok_or_else(|| CabError::DegenerateTask("imputation sample without a mask".into()))?;
            masked_mse(output, &sample.values, Some(&hidden_weights(mask)))
        }
        Task::Anomaly => masked_mse(output, &sample.values, None),
        Task::Classification => {
            let label = sample
                .label
                .ok_or_else(|| CabError::DegenerateTask("classification sample without a label".into()))?;
            let (loss, g) = cross_entropy(output.row(0), label)?;
            Ok((loss, Matrix::row_vector(&g)?))
        }
    }
}

/// The mask the model sees: imputation samples hide entries, other tasks
/// see everything.
pub fn input_mask(sample: &SeriesSample, task: Task) -> Option<&Matrix> {
    match task {
        Task::Imputation => sample.mask.as_ref(),
        Task::Anomaly | Task::Classification => None,
    }
}

/// Forward, loss and backward for one sample; gradients are scaled by `scale`.
pub fn accumulate_sample(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    sample: &SeriesSample,
    scale: f64,
    frozen: Option<&LagPlan>,
) -> Result<f64> {
    let (out, cache) = forward(params, cfg, &sample.values, input_mask(sample, cfg.task), frozen)?;
    let (loss, dout) = sample_loss(&out, sample, cfg.task)?;
    if !loss.is_finite() {
        return Err(CabError::NonFinite(format!("loss evaluated to {loss}")));
    }
    backward(params, cfg, &cache, &dout.scale(scale))?;
    Ok(loss)
}
