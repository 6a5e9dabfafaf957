//! Closed-form expert updates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SalMoeError};
use crate::expert::GaussianExpert;
use crate::linalg::{rcond, solve_spd};
use crate::model::Dataset;
use crate::sal::{gig_moments_unchecked, SalParams};

/// Smallest total responsibility a component may carry.
pub const EMPTY_COMPONENT_MASS: f64 = 1e-8;

/// Smallest reciprocal condition number accepted for a regression system.
pub const SYSTEM_RCOND_MIN: f64 = 1e-12;

/// A SAL M-step result together with the scale before flooring.
#[derive(Debug, Clone, PartialEq)]
pub struct MStepOutput {
    pub params: SalParams,
    pub sigma_unfloored: f64,
}

fn check_lengths(d: &Dataset, cols: &[&[f64]]) -> Result<()> {
    if cols.iter().any(|c| c.len() != d.n()) {
        return Err(SalMoeError::DimensionMismatch(
            "weight column length differs from n".into(),
        ));
    }
    Ok(())
}

fn check_mass(mass: f64, component: usize) -> Result<()> {
    if !(mass >= EMPTY_COMPONENT_MASS) {
        return Err(SalMoeError::EmptyComponent { component, mass });
    }
    Ok(())
}

fn solve_checked(a: &DMatrix<f64>, b: &DVector<f64>, component: usize) -> Result<DVector<f64>> {
    let rc = rcond(a);
    if !(rc >= SYSTEM_RCOND_MIN) {
        return Err(SalMoeError::SingularSystem {
            component,
            rcond: rc,
        });
    }
    solve_spd(a, b).ok_or(SalMoeError::SingularSystem {
        component,
        rcond: rc,
    })
}

/// SAL expert update from frozen E-step weights, in the order β, α, σ.
///
/// `component` is the 1-based index used in error messages.
pub fn m_step_expert(
    d: &Dataset,
    gamma: &[f64],
    v2: &[f64],
    v3: &[f64],
    sigma_min: f64,
) -> Result<SalParams> {
    Ok(m_step_expert_detailed(d, gamma, v2, v3, sigma_min, 1)?.params)
}

/// As [`m_step_expert`], also returning the scale before the floor is applied.
pub fn m_step_expert_detailed(
    d: &Dataset,
    gamma: &[f64],
    v2: &[f64],
    v3: &[f64],
    sigma_min: f64,
    component: usize,
) -> Result<MStepOutput> {
    check_lengths(d, &[gamma, v2, v3])?;
    let x = d.x();
    let y = d.y();
    let w = x.ncols();
    let mut sxx = DMatrix::<f64>::zeros(w, w);
    let mut sx = DVector::<f64>::zeros(w);
    let mut sxy = DVector::<f64>::zeros(w);
    let (mut sg, mut sgy, mut sgv3) = (0.0, 0.0, 0.0);
    let mut row = vec![0.0; w];
    for i in 0..d.n() {
        let g = gamma[i];
        if g == 0.0 {
            continue;
        }
        for (j, v) in row.iter_mut().enumerate() {
            *v = x[(i, j)];
        }
        let gv2 = g * v2[i];
        for a in 0..w {
            let ga = gv2 * row[a];
            for b in 0..=a {
                sxx[(a, b)] += ga * row[b];
            }
            sx[a] += g * row[a];
            sxy[a] += ga * y[i];
        }
        sg += g;
        sgy += g * y[i];
        sgv3 += g * v3[i];
    }
    check_mass(sg, component)?;
    for a in 0..w {
        for b in 0..a {
            sxx[(b, a)] = sxx[(a, b)];
        }
    }
    let a = sxx - &sx * sx.transpose() / sgv3;
    let rhs = sxy - &sx * (sgy / sgv3);
    let beta = solve_checked(&a, &rhs, component)?;

    let mu = x * &beta;
    let (mut sr, mut sv2r2) = (0.0, 0.0);
    for i in 0..d.n() {
        let r = y[i] - mu[i];
        sr += gamma[i] * r;
        sv2r2 += gamma[i] * v2[i] * r * r;
    }
    let alpha = sr / sgv3;
    let sigma_unfloored = (sv2r2 - 2.0 * alpha * sr + alpha * alpha * sgv3) / sg;
    let sigma = if sigma_unfloored < sigma_min {
        sigma_min
    } else {
        sigma_unfloored
    };
    if !(alpha.is_finite() && sigma.is_finite()) || beta.iter().any(|b| !b.is_finite()) {
        return Err(SalMoeError::NumericalFailure(format!(
            "non-finite M-step for component {component}"
        )));
    }
    Ok(MStepOutput {
        params: SalParams {
            alpha,
            sigma,
            beta: beta.as_slice().to_vec(),
        },
        sigma_unfloored,
    })
}

/// E-step weights `(v2, v3)` of one component from residuals at its current parameters.
pub(crate) fn latent_weights(
    resid: &[f64],
    alpha: f64,
    sigma: f64,
    b_floor: f64,
    v2: &mut [f64],
    v3: &mut [f64],
) {
    let a = 2.0 + alpha * alpha / sigma;
    for ((r, o2), o3) in resid.iter().zip(v2.iter_mut()).zip(v3.iter_mut()) {
        let (m2, m3) = gig_moments_unchecked(a, r * r / sigma, b_floor);
        *o2 = m2;
        *o3 = m3;
    }
}

/// Expected complete-data log-likelihood of one SAL expert (additive constants dropped).
pub fn expert_q_value(d: &Dataset, gamma: &[f64], v2: &[f64], v3: &[f64], p: &SalParams) -> f64 {
    let mu = d.x() * DVector::from_column_slice(&p.beta);
    let (alpha, sigma) = (p.alpha, p.sigma);
    (0..d.n())
        .map(|i| {
            let r = d.y()[i] - mu[i];
            gamma[i]
                * (-0.5 * sigma.ln() - v2[i] * r * r / (2.0 * sigma) + alpha * r / sigma
                    - alpha * alpha * v3[i] / (2.0 * sigma))
        })
        .sum()
}

/// Gaussian expert update: weighted least squares and weighted residual variance.
pub fn gaussian_m_step(
    d: &Dataset,
    gamma: &[f64],
    sigma_min: f64,
    component: usize,
) -> Result<GaussianExpert> {
    check_lengths(d, &[gamma])?;
    let x = d.x();
    let y = d.y();
    let w = x.ncols();
    let mut sxx = DMatrix::<f64>::zeros(w, w);
    let mut sxy = DVector::<f64>::zeros(w);
    let mut sg = 0.0;
    for i in 0..d.n() {
        let g = gamma[i];
        if g == 0.0 {
            continue;
        }
        for a in 0..w {
            let ga = g * x[(i, a)];
            for b in 0..=a {
                sxx[(a, b)] += ga * x[(i, b)];
            }
            sxy[a] += ga * y[i];
        }
        sg += g;
    }
    check_mass(sg, component)?;
    for a in 0..w {
        for b in 0..a {
            sxx[(b, a)] = sxx[(a, b)];
        }
    }
    let beta = solve_checked(&sxx, &sxy, component)?;
    let mu = x * &beta;
    let ss: f64 = (0..d.n()).map(|i| gamma[i] * (y[i] - mu[i]).powi(2)).sum();
    let sigma = (ss / sg).max(sigma_min);
    if !sigma.is_finite() || beta.iter().any(|b| !b.is_finite()) {
        return Err(SalMoeError::NumericalFailure(format!(
            "non-finite M-step for component {component}"
        )));
    }
    Ok(GaussianExpert {
        sigma,
        beta: beta.as_slice().to_vec(),
    })
}
