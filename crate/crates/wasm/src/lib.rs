//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Series cross the boundary as row-major `Float64Array`s of shape `t × d`.
//! The plain functions do the work so they can be tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use cab_core::attention::{correlated_attention_forward, CabConfig, CabScalars};
use cab_core::numerics::{l2_normalize_cols, L2_EPSILON};
use cab_core::synthdata::{gen_lagged_series, DatasetSpec, PlantedLag, Task};
use cab_core::xcorr::{lag_parts, topk_lags, LagPath};
use cab_core::Matrix;
use wasm_bindgen::prelude::*;

type Result<T> = std::result::Result<T, String>;

fn to_matrix(values: &[f64], t: usize, d: usize) -> Result<Matrix> {
    Matrix::new(t, d, values.to_vec()).map_err(|e| e.to_string())
}

/// Base process of every feature: AR(1) coefficient and sinusoid amplitude.
#[derive(Debug, Clone, Copy)]
pub struct Base {
    pub ar_coef: f64,
    pub sin_amp: f64,
}

/// One noisy series with the given planted couplings (`"0:1:7@0.8, 2:3:13"`).
pub fn series(t: usize, d: usize, lags: &str, noise: f64, base: Base, seed: u64) -> Result<Vec<f64>> {
    let lags = lags
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<PlantedLag>().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>>>()?;
    let spec = DatasetSpec {
        task: Task::Anomaly,
        t_len: t,
        d,
        samples: 1,
        lags,
        noise_level: noise,
        ar_coef: base.ar_coef,
        sin_amp: base.sin_amp,
        anomaly_count: 0,
        seed,
        ..DatasetSpec::default()
    };
    let sample = gen_lagged_series(&spec).map_err(|e| e.to_string())?.remove(0);
    Ok(sample.values.into_vec())
}

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct LagReport {
    diag: Vec<f64>,
    nondiag: Vec<f64>,
    combined: Vec<f64>,
    lags: Vec<u32>,
}

#[wasm_bindgen]
impl LagReport {
    /// Auto-correlation score per lag (index 0 is lag 0).
    #[wasm_bindgen(getter)]
    pub fn diag(&self) -> Vec<f64> {
        self.diag.clone()
    }

    /// Cross-feature score per lag.
    #[wasm_bindgen(getter)]
    pub fn nondiag(&self) -> Vec<f64> {
        self.nondiag.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn combined(&self) -> Vec<f64> {
        self.combined.clone()
    }

    /// Selected lags, best first.
    #[wasm_bindgen(getter)]
    pub fn lags(&self) -> Vec<u32> {
        self.lags.clone()
    }
}

/// Scores every lag of the series against itself and picks the TopK.
pub fn score(values: &[f64], t: usize, d: usize, lambda: f64, c: usize) -> Result<LagReport> {
    let x = l2_normalize_cols(&to_matrix(values, t, d)?, L2_EPSILON).map_err(|e| e.to_string())?;
    let parts = lag_parts(&x, &x, LagPath::Fft, 1).map_err(|e| e.to_string())?;
    let scores = parts.combine(lambda).map_err(|e| e.to_string())?;
    let selection = topk_lags(&scores, c, t).map_err(|e| e.to_string())?;
    Ok(LagReport {
        diag: scores.diag_scores,
        nondiag: scores.nondiag_scores,
        combined: scores.combined,
        lags: selection.lags.iter().map(|&l| l as u32).collect(),
    })
}

/// Correlated attention with queries, keys and values all set to the series.
pub fn attend(values: &[f64], t: usize, d: usize, lambda: f64, beta: f64, tau: f64, c: usize) -> Result<Vec<f64>> {
    let x = to_matrix(values, t, d)?;
    let cfg = CabConfig {
        c,
        ..CabConfig::default()
    };
    let scalars = CabScalars { lambda, beta, tau };
    let (out, _) = correlated_attention_forward(&x, &x, &x, scalars, &cfg, None).map_err(|e| e.to_string())?;
    Ok(out.into_vec())
}

#[wasm_bindgen]
pub fn generate_series(
    t: usize,
    d: usize,
    lags: &str,
    noise: f64,
    ar_coef: f64,
    sin_amp: f64,
    seed: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    series(t, d, lags, noise, Base { ar_coef, sin_amp }, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn lag_scores(values: &[f64], t: usize, d: usize, lambda: f64, c: usize) -> std::result::Result<LagReport, JsError> {
    score(values, t, d, lambda, c).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn correlated_output(
    values: &[f64],
    t: usize,
    d: usize,
    lambda: f64,
    beta: f64,
    tau: f64,
    c: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    attend(values, t, d, lambda, beta, tau, c).map_err(|e| JsError::new(&e))
}
