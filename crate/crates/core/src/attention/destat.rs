//! Projectors that recover the de-stationary factors `ξ > 0` and `Δ ∈ R^T`
//! from the statistics removed by series stationarization.

use rand::Rng;

use crate::error::{CabError, Result};
use crate::numerics::ops::{sigmoid, softplus, softplus_inverse};
use crate::numerics::{Matrix, Param};

/// `tanh(x·W1 + b1)·W2 + b2` for a single input row.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayer {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
}

#[derive(Debug, Clone)]
struct TwoLayerCache {
    input: Matrix,
    hidden: Matrix,
}

impl TwoLayer {
    fn init(prefix: &str, inputs: usize, hidden: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let a1 = (1.0 / inputs as f64).sqrt();
        let a2 = 0.1 * (1.0 / hidden as f64).sqrt();
        Self {
            w1: Param::new(
                format!("{prefix}.w1"),
                Matrix::from_fn(inputs, hidden, |_, _| rng.random_range(-a1..a1)),
            ),
            b1: Param::new(format!("{prefix}.b1"), Matrix::zeros(1, hidden)),
            w2: Param::new(
                format!("{prefix}.w2"),
                Matrix::from_fn(hidden, outputs, |_, _| rng.random_range(-a2..a2)),
            ),
            b2: Param::new(format!("{prefix}.b2"), Matrix::zeros(1, outputs)),
        }
    }

    fn forward(&self, input: &Matrix) -> Result<(Matrix, TwoLayerCache)> {
        let hidden = input
            .matmul(&self.w1.value)?
            .add(&self.b1.value)?
            .map(f64::tanh);
        let out = hidden.matmul(&self.w2.value)?.add(&self.b2.value)?;
        Ok((
            out,
            TwoLayerCache {
                input: input.clone(),
                hidden,
            },
        ))
    }

    fn backward(&mut self, cache: &TwoLayerCache, dout: &Matrix) -> Result<()> {
        self.b2.grad.add_assign(dout)?;
        self.w2.grad.add_assign(&cache.hidden.matmul_tn(dout)?)?;
        let dh = dout.matmul_nt(&self.w2.value)?;
        let dpre = dh.zip_with(&cache.hidden, "tanh backward", |g, h| g * (1.0 - h * h))?;
        self.b1.grad.add_assign(&dpre)?;
        self.w1.grad.add_assign(&cache.input.matmul_tn(&dpre)?)?;
        Ok(())
    }

    fn params(&self) -> [&Param; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn params_mut(&mut self) -> [&mut Param; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// The two projectors. Their input is the row `[σ_X, μ_X]` of length 2·d.
#[derive(Debug, Clone, PartialEq)]
pub struct DestatParams {
    pub xi: TwoLayer,
    pub delta: TwoLayer,
}

/// De-stationary factors for one series.
#[derive(Debug, Clone, PartialEq)]
pub struct DestatFactors {
    pub xi: f64,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DestatCache {
    xi: TwoLayerCache,
    delta: TwoLayerCache,
    xi_pre: f64,
}

impl DestatParams {
    /// Hidden width `hidden`; `ξ` starts near 1 and `Δ` near 0.
    pub fn init(features: usize, seq_len: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut xi = TwoLayer::init("destat.xi", 2 * features, hidden, 1, rng);
        xi.b2.value = Matrix::scalar(softplus_inverse(1.0));
        Self {
            xi,
            delta: TwoLayer::init("destat.delta", 2 * features, hidden, seq_len, rng),
        }
    }

    pub fn seq_len(&self) -> usize {
        self.delta.b2.value.cols()
    }

    pub fn forward(&self, sigma: &[f64], mu: &[f64]) -> Result<(DestatFactors, DestatCache)> {
        let input = Matrix::row_vector(&[sigma, mu].concat())?;
        if input.cols() != self.xi.w1.value.rows() {
            return Err(CabError::Shape {
                op: "destat projector input",
                left: input.shape(),
                right: self.xi.w1.value.shape(),
            });
        }
        let (xi_out, xi_cache) = self.xi.forward(&input)?;
        let (delta_out, delta_cache) = self.delta.forward(&input)?;
        let xi_pre = xi_out.item();
        Ok((
            DestatFactors {
                xi: softplus(xi_pre),
                delta: delta_out.into_vec(),
            },
            DestatCache {
                xi: xi_cache,
                delta: delta_cache,
                xi_pre,
            },
        ))
    }

    /// Accumulates parameter gradients given `∂L/∂ξ` and `∂L/∂Δ`.
    pub fn backward(&mut self, cache: &DestatCache, dxi: f64, ddelta: &[f64]) -> Result<()> {
        let dpre = Matrix::scalar(dxi * sigmoid(cache.xi_pre));
        self.xi.backward(&cache.xi, &dpre)?;
        self.delta.backward(&cache.delta, &Matrix::row_vector(ddelta)?)?;
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param> {
        self.xi.params().into_iter().chain(self.delta.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let Self { xi, delta } = self;
        xi.params_mut().into_iter().chain(delta.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_gradient, GradCheckOptions, ParamSet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    impl ParamSet for DestatParams {
        fn params(&self) -> Vec<&Param> {
            DestatParams::params(self)
        }
        fn params_mut(&mut self) -> Vec<&mut Param> {
            DestatParams::params_mut(self)
        }
    }

    #[test]
    fn scale_starts_near_one_and_stays_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = DestatParams::init(3, 6, 8, &mut rng);
        let (f, _) = p.forward(&[1.0, 2.0, 0.5], &[0.0, -1.0, 3.0]).unwrap();
        assert!((f.xi - 1.0).abs() < 0.3);
        assert_eq!(f.delta.len(), 6);
        let (f, _) = p.forward(&[1e3, 1e3, 1e3], &[-1e3, 1e3, 0.0]).unwrap();
        assert!(f.xi > 0.0);
    }

    #[test]
    fn projector_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = DestatParams::init(2, 5, 4, &mut rng);
        let (sigma, mu) = ([0.7, 1.9], [0.3, -0.8]);
        let weights = [0.4, -1.0, 0.25, 2.0, -0.6];
        let loss = |p: &DestatParams| {
            let (f, _) = p.forward(&sigma, &mu).unwrap();
            1.7 * f.xi + f.delta.iter().zip(&weights).map(|(d, w)| d * w).sum::<f64>()
        };
        let (_, cache) = p.forward(&sigma, &mu).unwrap();
        p.backward(&cache, 1.7, &weights).unwrap();
        let report = check_gradient(&mut p, loss, GradCheckOptions::default());
        assert!(report.passed, "{report:#?}");
        assert_eq!(report.params.len(), 8);
    }
}
