//! Temporal, correlated and mixture-of-head attention.

mod correlated;
mod destat;
mod mixture;
mod temporal;

pub use correlated::{
    correlated_attention, correlated_attention_backward, correlated_attention_forward, select_lags,
    CabCache, CabConfig, CabGrad, CabScalars, LagAggregation, LambdaMode,
};
pub use destat::{DestatCache, DestatFactors, DestatParams, TwoLayer};
pub use mixture::{
    mixture_of_head, mixture_of_head_backward, mixture_of_head_forward, multi_head_attention, CabParams,
    HeadKind, HeadParams, MixtureCache, MixtureConfig, MixtureGrad, MixtureParams, TemporalKind,
};
pub use temporal::{
    destationary_attention, destationary_attention_forward, self_attention, self_attention_forward,
    temporal_backward, TemporalCache, TemporalGrad,
};
