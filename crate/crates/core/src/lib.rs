//! Correlated attention for multivariate time series.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: a small dense matrix kernel with hand-derived adjoints and a
//!   finite-difference gradient checker.
//! * [`xcorr`]: lagged cross-covariance matrices `roll(K̂, l)ᵀ Q̂` for every lag,
//!   computed either directly or through FFT, plus lag scoring and TopK selection.
//! * [`attention`]: self-attention, de-stationary attention, the correlated
//!   attention block and mixture-of-head attention.
//! * [`model`]: an encoder-only transformer built on mixture-of-head attention,
//!   task losses, optimizers, checkpoints and a training loop.
//! * [`synthdata`]: deterministic synthetic series with planted lagged
//!   cross-correlations, masking, anomaly injection and a text dataset format.

pub mod attention;
pub mod error;
pub mod model;
pub mod numerics;
pub mod synthdata;
pub mod xcorr;

pub use error::{CabError, Result};
pub use numerics::Matrix;
