//! Expert (component) distributions of a mixture of experts.
//!
//! Every expert is a location family whose location is the linear predictor
//! `xᵀβ`. The SAL expert is the model being fitted; the Gaussian expert backs
//! the GMoE comparator and the skew-normal expert only generates data.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_2_PI, PI};

use crate::error::{Result, SalMoeError};
use crate::sal::{sal_log_density_unchecked, sal_sample_unchecked, SalParams};

pub trait Expert: Clone + std::fmt::Debug + Send + Sync + Serialize + DeserializeOwned {
    fn beta(&self) -> &[f64];

    fn beta_mut(&mut self) -> &mut Vec<f64>;

    /// `log f(y | location = mu)`.
    fn log_density(&self, y: f64, mu: f64) -> f64;

    /// `E[Y] - mu`.
    fn mean_offset(&self) -> f64;

    /// `Var[Y]` (location free).
    fn variance(&self) -> f64;

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, mu: f64) -> f64;

    /// Key used for canonical component ordering: intercept, then shape, then scale.
    fn order_key(&self) -> [f64; 3];

    /// Named scalar parameters other than `beta`, in reporting order.
    fn shape_params(&self) -> Vec<(&'static str, f64)>;

    fn location(&self, x: &[f64]) -> f64 {
        dot(x, self.beta())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

impl Expert for SalParams {
    fn beta(&self) -> &[f64] {
        &self.beta
    }

    fn beta_mut(&mut self) -> &mut Vec<f64> {
        &mut self.beta
    }

    #[inline]
    fn log_density(&self, y: f64, mu: f64) -> f64 {
        sal_log_density_unchecked(y, mu, self.alpha, self.sigma)
    }

    fn mean_offset(&self) -> f64 {
        self.alpha
    }

    fn variance(&self) -> f64 {
        SalParams::variance(self)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, mu: f64) -> f64 {
        sal_sample_unchecked(rng, mu, self.alpha, self.sigma)
    }

    fn order_key(&self) -> [f64; 3] {
        [self.beta[0], self.alpha, self.sigma]
    }

    fn shape_params(&self) -> Vec<(&'static str, f64)> {
        vec![("sigma", self.sigma), ("alpha", self.alpha)]
    }
}

/// Gaussian expert `N(xᵀβ, sigma)`; `sigma` is the variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianExpert {
    pub sigma: f64,
    pub beta: Vec<f64>,
}

impl GaussianExpert {
    pub fn new(sigma: f64, beta: Vec<f64>) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(SalMoeError::InvalidParameter(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self { sigma, beta })
    }
}

impl Expert for GaussianExpert {
    fn beta(&self) -> &[f64] {
        &self.beta
    }

    fn beta_mut(&mut self) -> &mut Vec<f64> {
        &mut self.beta
    }

    #[inline]
    fn log_density(&self, y: f64, mu: f64) -> f64 {
        let r = y - mu;
        -0.5 * (2.0 * PI * self.sigma).ln() - 0.5 * r * r / self.sigma
    }

    fn mean_offset(&self) -> f64 {
        0.0
    }

    fn variance(&self) -> f64 {
        self.sigma
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, mu: f64) -> f64 {
        mu + self.sigma.sqrt() * rng.sample::<f64, _>(StandardNormal)
    }

    fn order_key(&self) -> [f64; 3] {
        [self.beta[0], 0.0, self.sigma]
    }

    fn shape_params(&self) -> Vec<(&'static str, f64)> {
        vec![("sigma", self.sigma)]
    }
}

/// Azzalini skew-normal expert with location `xᵀβ`, scale `sigma` and shape `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewNormalExpert {
    pub lambda: f64,
    pub sigma: f64,
    pub beta: Vec<f64>,
}

impl SkewNormalExpert {
    pub fn new(lambda: f64, sigma: f64, beta: Vec<f64>) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0 && lambda.is_finite()) {
            return Err(SalMoeError::InvalidParameter(format!(
                "skew-normal needs finite lambda and positive sigma (got {lambda}, {sigma})"
            )));
        }
        Ok(Self {
            lambda,
            sigma,
            beta,
        })
    }

    pub fn delta(&self) -> f64 {
        self.lambda / (1.0 + self.lambda * self.lambda).sqrt()
    }
}

/// `log Φ(x)` with an asymptotic tail for very negative arguments.
fn log_std_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        -0.5 * x * x - (-x).ln() - 0.5 * (2.0 * PI).ln()
    }
}

impl Expert for SkewNormalExpert {
    fn beta(&self) -> &[f64] {
        &self.beta
    }

    fn beta_mut(&mut self) -> &mut Vec<f64> {
        &mut self.beta
    }

    fn log_density(&self, y: f64, mu: f64) -> f64 {
        let z = (y - mu) / self.sigma;
        2f64.ln() - self.sigma.ln() - 0.5 * (2.0 * PI).ln() - 0.5 * z * z
            + log_std_normal_cdf(self.lambda * z)
    }

    fn mean_offset(&self) -> f64 {
        self.sigma * self.delta() * FRAC_2_PI.sqrt()
    }

    fn variance(&self) -> f64 {
        let d = self.delta();
        self.sigma * self.sigma * (1.0 - FRAC_2_PI * d * d)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, mu: f64) -> f64 {
        let d = self.delta();
        let u0: f64 = rng.sample(StandardNormal);
        let u1: f64 = rng.sample(StandardNormal);
        mu + self.sigma * (d * u0.abs() + (1.0 - d * d).sqrt() * u1)
    }

    fn order_key(&self) -> [f64; 3] {
        [self.beta[0], self.lambda, self.sigma]
    }

    fn shape_params(&self) -> Vec<(&'static str, f64)> {
        vec![("sigma", self.sigma), ("lambda", self.lambda)]
    }
}
