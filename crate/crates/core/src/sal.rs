//! Shifted asymmetric Laplace (SAL) kernel and the generalized inverse
//! Gaussian (GIG) moments that drive the E-step.
//!
//! The SAL family used here has index `ν = 1/2`, for which the Bessel function
//! has the closed form `K_{1/2}(u) = sqrt(π / 2u) · exp(-u)`. Substituting it,
//! the density reduces to
//!
//! ```text
//! g(y | α, σ, μ) = exp(α r / σ - |r| sqrt(2σ + α²) / σ) / sqrt(2σ + α²),   r = y - μ
//! ```
//!
//! which is what [`sal_log_density`] evaluates. Its value at `r = 0` is the
//! continuous limit `1 / sqrt(2σ + α²)`.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Result, SalMoeError};

/// Absolute floor substituted for zero scaled residuals in the E-step.
pub const DEFAULT_B_FLOOR: f64 = 1e-10;

/// Lower bound enforced on every expert scale after an M-step.
pub const DEFAULT_SIGMA_MIN: f64 = 1e-6;

/// Index of the GIG mixing law for the SAL family.
pub const GIG_NU: f64 = 0.5;

/// Parameters of one SAL expert: skewness `alpha`, scale `sigma` (the variance
/// of the Gaussian part) and regression coefficients `beta` (intercept first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalParams {
    pub alpha: f64,
    pub sigma: f64,
    pub beta: Vec<f64>,
}

impl SalParams {
    pub fn new(alpha: f64, sigma: f64, beta: Vec<f64>) -> Result<Self> {
        check_shape(alpha, sigma)?;
        if beta.is_empty() || beta.iter().any(|b| !b.is_finite()) {
            return Err(SalMoeError::InvalidParameter(
                "beta must be non-empty and finite".into(),
            ));
        }
        Ok(Self { alpha, sigma, beta })
    }

    /// Mean of `Y` given location `mu`: `mu + alpha`.
    pub fn mean(&self, mu: f64) -> f64 {
        mu + self.alpha
    }

    /// Variance of `Y`: `alpha² + sigma`.
    pub fn variance(&self) -> f64 {
        self.alpha * self.alpha + self.sigma
    }
}

/// Arguments `(a, b, ν)` of a GIG law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigArgs {
    pub a: f64,
    pub b: f64,
    pub nu: f64,
}

impl GigArgs {
    /// Posterior law of the latent SAL mixing variable given a residual:
    /// `a = 2 + α²/σ`, `b = r²/σ`.
    pub fn for_residual(residual: f64, alpha: f64, sigma: f64) -> Self {
        Self {
            a: 2.0 + alpha * alpha / sigma,
            b: residual * residual / sigma,
            nu: GIG_NU,
        }
    }
}

fn check_shape(alpha: f64, sigma: f64) -> Result<()> {
    if !alpha.is_finite() {
        return Err(SalMoeError::InvalidParameter(format!(
            "alpha must be finite, got {alpha}"
        )));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(SalMoeError::InvalidParameter(format!(
            "sigma must be finite and positive, got {sigma}"
        )));
    }
    Ok(())
}

/// Log-density without validation. Callers guarantee `sigma > 0`.
#[inline]
pub(crate) fn sal_log_density_unchecked(y: f64, mu: f64, alpha: f64, sigma: f64) -> f64 {
    let r = y - mu;
    let s = 2.0 * sigma + alpha * alpha;
    (alpha * r - r.abs() * s.sqrt()) / sigma - 0.5 * s.ln()
}

/// `log g(y | α, σ, μ)` for the SAL distribution.
pub fn sal_log_density(y: f64, mu: f64, alpha: f64, sigma: f64) -> Result<f64> {
    check_shape(alpha, sigma)?;
    if !(y.is_finite() && mu.is_finite()) {
        return Err(SalMoeError::InvalidParameter(
            "y and mu must be finite".into(),
        ));
    }
    Ok(sal_log_density_unchecked(y, mu, alpha, sigma))
}

/// Draws `Y = μ + αV + Z·sqrt(V)` with `V ~ Exp(1)` and `Z ~ N(0, σ)`.
pub fn sal_sample<R: Rng + ?Sized>(rng: &mut R, mu: f64, alpha: f64, sigma: f64) -> Result<f64> {
    check_shape(alpha, sigma)?;
    Ok(sal_sample_unchecked(rng, mu, alpha, sigma))
}

#[inline]
pub(crate) fn sal_sample_unchecked<R: Rng + ?Sized>(
    rng: &mut R,
    mu: f64,
    alpha: f64,
    sigma: f64,
) -> f64 {
    let v: f64 = rng.sample(Exp1);
    let z: f64 = rng.sample::<f64, _>(StandardNormal) * sigma.sqrt();
    mu + alpha * v + z * v.sqrt()
}

/// `log K_{1/2}(z)`.
#[inline]
fn log_bessel_k_half(z: f64) -> f64 {
    0.5 * (PI / (2.0 * z)).ln() - z
}

/// `log h(w)` for the GIG density with index `g.nu`, which must be 1/2.
pub fn gig_log_density(w: f64, g: GigArgs) -> Result<f64> {
    if !(w > 0.0 && g.a > 0.0 && g.b > 0.0)
        || !(w.is_finite() && g.a.is_finite() && g.b.is_finite())
    {
        return Err(SalMoeError::InvalidParameter(format!(
            "GIG density needs w, a, b > 0 (got w={w}, a={}, b={})",
            g.a, g.b
        )));
    }
    if g.nu != GIG_NU {
        return Err(SalMoeError::InvalidParameter(format!(
            "only the index 1/2 is supported, got {}",
            g.nu
        )));
    }
    let nu = g.nu;
    Ok(
        0.5 * nu * (g.a / g.b).ln() - 2f64.ln() - log_bessel_k_half((g.a * g.b).sqrt())
            + (nu - 1.0) * w.ln()
            - 0.5 * (g.b / w + g.a * w),
    )
}

/// Conditional moments `(E[1/V], E[V])` of a GIG(a, b, 1/2) variable.
///
/// With `R_{1/2}(z) = 1 + 1/z` these are `sqrt(a/b)` and `sqrt(b/a) + 1/a`.
/// `b` below `b_floor` is replaced by `b_floor`.
pub fn gig_moments(g: GigArgs, b_floor: f64) -> Result<(f64, f64)> {
    if !(g.a > 0.0 && g.a.is_finite()) {
        return Err(SalMoeError::InvalidParameter(format!(
            "GIG a must be positive, got {}",
            g.a
        )));
    }
    if !(b_floor > 0.0) {
        return Err(SalMoeError::InvalidParameter(
            "b_floor must be positive".into(),
        ));
    }
    Ok(gig_moments_unchecked(g.a, g.b, b_floor))
}

#[inline]
pub(crate) fn gig_moments_unchecked(a: f64, b: f64, b_floor: f64) -> (f64, f64) {
    let b = if b < b_floor { b_floor } else { b };
    let ratio = (a / b).sqrt();
    (ratio, 1.0 / ratio + 1.0 / a)
}
