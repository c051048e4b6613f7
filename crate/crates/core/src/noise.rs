//! Measurement-noise generators for the simulated regimes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::specfun::{self, RngStream};

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseRegime {
    /// `v ~ N(0, r̄ R̄)`.
    Gaussian { r_regular: f64, rbar: DMatrix<f64> },
    /// With probability `1 - p_out` Gaussian as above, otherwise each
    /// coordinate uniform on `[-6√r_out, 6√r_out]`.
    GaussianUniform { r_regular: f64, rbar: DMatrix<f64>, p_out: f64, r_out: f64 },
    /// `r ~ IG(α, β)`, then `v ~ N(0, r R̄)`.
    MultivariateT { alpha: f64, beta: f64, rbar: DMatrix<f64> },
}

impl NoiseRegime {
    pub fn validate(&self) -> Result<()> {
        const OP: &str = "NoiseRegime";
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::domain(OP, format!("{name} = {v} must be positive")))
            }
        };
        match self {
            NoiseRegime::Gaussian { r_regular, rbar } => {
                positive("r_regular", *r_regular)?;
                linalg::cholesky(rbar, OP).map(|_| ())
            }
            NoiseRegime::GaussianUniform { r_regular, rbar, p_out, r_out } => {
                positive("r_regular", *r_regular)?;
                positive("r_out", *r_out)?;
                if !(0.0..=1.0).contains(p_out) {
                    return Err(Error::domain(OP, format!("p_out = {p_out} must lie in [0, 1]")));
                }
                linalg::cholesky(rbar, OP).map(|_| ())
            }
            NoiseRegime::MultivariateT { alpha, beta, rbar } => {
                positive("alpha", *alpha)?;
                positive("beta", *beta)?;
                linalg::cholesky(rbar, OP).map(|_| ())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseRegime::Gaussian { rbar, .. }
            | NoiseRegime::GaussianUniform { rbar, .. }
            | NoiseRegime::MultivariateT { rbar, .. } => rbar.nrows(),
        }
    }
}

/// Pre-factored sampler for one regime.
#[derive(Clone, Debug)]
pub struct NoiseSampler {
    regime: NoiseRegime,
    chol: DMatrix<f64>,
}

impl NoiseSampler {
    pub fn new(regime: NoiseRegime) -> Result<Self> {
        regime.validate()?;
        let rbar = match &regime {
            NoiseRegime::Gaussian { rbar, .. }
            | NoiseRegime::GaussianUniform { rbar, .. }
            | NoiseRegime::MultivariateT { rbar, .. } => rbar,
        };
        let chol = linalg::cholesky(rbar, "NoiseSampler")?.l();
        Ok(Self { regime, chol })
    }

    pub fn regime(&self) -> &NoiseRegime {
        &self.regime
    }

    /// One draw, plus whether it came from the outlier branch (always false
    /// outside the mixture regime).
    pub fn sample_tagged(&self, rng: &mut RngStream) -> (DVector<f64>, bool) {
        let m = self.chol.nrows();
        let zero = DVector::zeros(m);
        match &self.regime {
            NoiseRegime::Gaussian { r_regular, .. } => {
                (specfun::sample_mvn_factored(&zero, &(&self.chol * r_regular.sqrt()), rng), false)
            }
            NoiseRegime::GaussianUniform { r_regular, p_out, r_out, .. } => {
                if rng.uniform() < *p_out {
                    let a = 6.0 * r_out.sqrt();
                    (DVector::from_fn(m, |_, _| a * (2.0 * rng.uniform() - 1.0)), true)
                } else {
                    (specfun::sample_mvn_factored(&zero, &(&self.chol * r_regular.sqrt()), rng), false)
                }
            }
            NoiseRegime::MultivariateT { alpha, beta, .. } => {
                let r = specfun::sample_inverse_gamma(*alpha, *beta, rng).expect("parameters validated at construction");
                (specfun::sample_mvn_factored(&zero, &(&self.chol * r.sqrt()), rng), false)
            }
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> DVector<f64> {
        self.sample_tagged(rng).0
    }
}

/// One draw from `regime`.
pub fn sample_noise(regime: &NoiseRegime, rng: &mut RngStream) -> Result<DVector<f64>> {
    Ok(NoiseSampler::new(regime.clone())?.sample(rng))
}
