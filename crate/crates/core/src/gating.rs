//! Multinomial-logit gating network and its minorize-maximize update.
//!
//! The gating coefficients are stored as the `(q+1) × (K-1)` matrix `E` of
//! free columns; the baseline column `η_K` is pinned to zero and never stored.
//! The update maximizes the quadratic minorizer built from Böhning's bound
//! `A_p - ppᵀ ⪯ ½(I - 11ᵀ/K)` on the multinomial-logit Hessian:
//!
//! ```text
//! E_new = E_old + 2 (TᵀT)⁻¹ G (I + 11ᵀ),    G = Tᵀ(Γ - Π)
//! ```
//!
//! A single step never decreases the gating part of the Q-function.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SalMoeError};
use crate::linalg::rcond;

/// Reciprocal condition number below which the gating design is singular.
pub const DESIGN_RCOND_MIN: f64 = 1e-12;

/// Default norm cap used when gating projection is switched on.
pub const DEFAULT_GATING_NORM_CAP: f64 = 1e3;

/// Free gating coefficients `[η_1, …, η_{K-1}]`, one column per non-baseline expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingParams {
    coef: DMatrix<f64>,
    k: usize,
}

impl GatingParams {
    pub fn new(coef: DMatrix<f64>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(SalMoeError::InvalidParameter("K must be at least 1".into()));
        }
        if coef.ncols() != k - 1 {
            return Err(SalMoeError::DimensionMismatch(format!(
                "gating matrix has {} columns, expected K-1 = {}",
                coef.ncols(),
                k - 1
            )));
        }
        if coef.nrows() == 0 {
            return Err(SalMoeError::DimensionMismatch(
                "gating matrix needs an intercept row".into(),
            ));
        }
        if coef.iter().any(|v| !v.is_finite()) {
            return Err(SalMoeError::InvalidParameter(
                "gating coefficients must be finite".into(),
            ));
        }
        Ok(Self { coef, k })
    }

    /// All-zero coefficients: uniform gates.
    pub fn zeros(q: usize, k: usize) -> Self {
        Self {
            coef: DMatrix::zeros(q + 1, k.saturating_sub(1)),
            k: k.max(1),
        }
    }

    /// Builds from free columns `η_1 … η_{K-1}`, each of length `q+1`.
    pub fn from_columns(columns: &[Vec<f64>], q: usize) -> Result<Self> {
        let k = columns.len() + 1;
        let mut coef = DMatrix::zeros(q + 1, k - 1);
        for (j, col) in columns.iter().enumerate() {
            if col.len() != q + 1 {
                return Err(SalMoeError::DimensionMismatch(format!(
                    "gating column {} has length {}, expected {}",
                    j + 1,
                    col.len(),
                    q + 1
                )));
            }
            for (r, v) in col.iter().enumerate() {
                coef[(r, j)] = *v;
            }
        }
        Self::new(coef, k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Gating covariate count `q` (excluding the intercept).
    pub fn q(&self) -> usize {
        self.coef.nrows() - 1
    }

    pub fn coef(&self) -> &DMatrix<f64> {
        &self.coef
    }

    /// Coefficients of component `k` (0-based) including the pinned baseline.
    pub fn column(&self, k: usize) -> Vec<f64> {
        if k + 1 == self.k {
            vec![0.0; self.coef.nrows()]
        } else {
            self.coef.column(k).iter().copied().collect()
        }
    }

    /// The `(q+1) × K` unpinned form with the zero baseline appended.
    pub fn full_matrix(&self) -> DMatrix<f64> {
        let mut full = DMatrix::zeros(self.coef.nrows(), self.k);
        full.columns_mut(0, self.k - 1).copy_from(&self.coef);
        full
    }

    /// Re-baselines an unpinned `(q+1) × K` coefficient matrix so that its last
    /// column becomes zero. Probabilities are invariant under this shift.
    pub fn from_unpinned(full: &DMatrix<f64>) -> Result<Self> {
        let k = full.ncols();
        let base = full.column(k - 1).clone_owned();
        let mut coef = DMatrix::zeros(full.nrows(), k - 1);
        for j in 0..k - 1 {
            coef.set_column(j, &(full.column(j) - &base));
        }
        Self::new(coef, k)
    }

    /// Log-probabilities for one gating vector, written into `out` (length K).
    #[inline]
    pub(crate) fn log_probs_into(&self, t: &[f64], out: &mut [f64]) {
        let km1 = self.k - 1;
        let mut max = 0.0f64;
        for j in 0..km1 {
            let col = self.coef.column(j);
            let s: f64 = col.iter().zip(t).map(|(a, b)| a * b).sum();
            out[j] = s;
            if s > max {
                max = s;
            }
        }
        out[km1] = 0.0;
        let mut total = 0.0;
        for v in out.iter() {
            total += (v - max).exp();
        }
        let lse = max + total.ln();
        for v in out.iter_mut() {
            *v -= lse;
        }
    }

    /// `n × K` matrix of `log π_k(t_i)` over the rows of `t`.
    pub fn log_prob_matrix(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        let n = t.nrows();
        let mut out = DMatrix::zeros(n, self.k);
        let mut row_t = vec![0.0; t.ncols()];
        let mut row = vec![0.0; self.k];
        for i in 0..n {
            for (c, v) in row_t.iter_mut().enumerate() {
                *v = t[(i, c)];
            }
            self.log_probs_into(&row_t, &mut row);
            for (k, v) in row.iter().enumerate() {
                out[(i, k)] = *v;
            }
        }
        out
    }

    /// Projects each free column onto the ball `‖η_k‖ ≤ cap`.
    pub fn project(&mut self, cap: f64) {
        for mut col in self.coef.column_iter_mut() {
            let norm = col.norm();
            if norm > cap {
                col *= cap / norm;
            }
        }
    }
}

/// Posterior component weights, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityMatrix(DMatrix<f64>);

impl ResponsibilityMatrix {
    /// Validates entries in `[0, 1]` and rows summing to one.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        for (i, row) in m.row_iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(SalMoeError::InvalidParameter(format!(
                    "responsibility row {i} has entries outside [0, 1]"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-10 {
                return Err(SalMoeError::InvalidParameter(format!(
                    "responsibility row {i} sums to {s}"
                )));
            }
        }
        Ok(Self(m))
    }

    pub(crate) fn new_unchecked(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.0
    }

    /// One-hot rows from 0-based labels.
    pub fn from_labels(labels: &[usize], k: usize) -> Result<Self> {
        let mut m = DMatrix::zeros(labels.len(), k);
        for (i, &z) in labels.iter().enumerate() {
            if z >= k {
                return Err(SalMoeError::InvalidParameter(format!(
                    "label {z} out of range for K={k}"
                )));
            }
            m[(i, z)] = 1.0;
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    /// Smallest index attaining each row's maximum (0-based).
    pub fn map_labels(&self) -> Vec<usize> {
        self.0
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

fn check_dims(e: &GatingParams, t: &DMatrix<f64>, gamma: &ResponsibilityMatrix) -> Result<()> {
    if t.ncols() != e.coef.nrows() {
        return Err(SalMoeError::DimensionMismatch(format!(
            "gating design has {} columns, coefficients expect {}",
            t.ncols(),
            e.coef.nrows()
        )));
    }
    if gamma.n() != t.nrows() || gamma.k() != e.k {
        return Err(SalMoeError::DimensionMismatch(format!(
            "responsibilities are {}×{}, expected {}×{}",
            gamma.n(),
            gamma.k(),
            t.nrows(),
            e.k
        )));
    }
    Ok(())
}

/// Gate probabilities `π_k(t)` for one gating vector (intercept first).
pub fn gating_probs(e: &GatingParams, t: &[f64]) -> Result<Vec<f64>> {
    if t.len() != e.coef.nrows() {
        return Err(SalMoeError::DimensionMismatch(format!(
            "gating vector has length {}, expected {}",
            t.len(),
            e.coef.nrows()
        )));
    }
    let mut out: Vec<f64> = (0..e.k - 1)
        .map(|j| e.coef.column(j).iter().zip(t).map(|(a, b)| a * b).sum())
        .chain(std::iter::once(0.0))
        .collect();
    let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    out.iter_mut().for_each(|v| *v = (*v - max).exp());
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Gating Q-function `Σ_i Σ_k γ_ik log π_k(t_i)`.
pub fn gating_q(e: &GatingParams, t: &DMatrix<f64>, gamma: &ResponsibilityMatrix) -> Result<f64> {
    check_dims(e, t, gamma)?;
    let lp = e.log_prob_matrix(t);
    Ok(lp.component_mul(gamma.matrix()).sum())
}

/// Score `G = Tᵀ(Γ - Π)` restricted to the free columns.
pub fn gating_score(
    e: &GatingParams,
    t: &DMatrix<f64>,
    gamma: &ResponsibilityMatrix,
) -> Result<DMatrix<f64>> {
    check_dims(e, t, gamma)?;
    Ok(score_unchecked(e, t, gamma))
}

fn score_unchecked(
    e: &GatingParams,
    t: &DMatrix<f64>,
    gamma: &ResponsibilityMatrix,
) -> DMatrix<f64> {
    let km1 = e.k - 1;
    let probs = e.log_prob_matrix(t).map(f64::exp);
    let resid = gamma.matrix().columns(0, km1) - probs.columns(0, km1);
    t.transpose() * resid
}

/// Gating design with its cached Gram inverse `(TᵀT)⁻¹`.
#[derive(Debug, Clone)]
pub struct GatingDesign {
    t: DMatrix<f64>,
    gram: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
    norm_cap: Option<f64>,
}

impl GatingDesign {
    /// Factorizes `TᵀT` once. Fails with `SingularDesign` if a non-intercept
    /// column is constant or the Gram matrix is ill-conditioned.
    pub fn new(t: &DMatrix<f64>) -> Result<Self> {
        for c in 1..t.ncols() {
            let col = t.column(c);
            let first = col[0];
            if col.iter().all(|v| *v == first) {
                return Err(SalMoeError::SingularDesign(format!(
                    "gating covariate column {c} is constant (collinear with the intercept)"
                )));
            }
        }
        let gram = t.transpose() * t;
        let rc = rcond(&gram);
        if !(rc >= DESIGN_RCOND_MIN) {
            return Err(SalMoeError::SingularDesign(format!(
                "TᵀT has reciprocal condition number {rc:.3e}; gating covariates are collinear"
            )));
        }
        let gram_inv = gram
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| SalMoeError::SingularDesign("TᵀT is not positive definite".into()))?;
        Ok(Self {
            t: t.clone(),
            gram,
            gram_inv,
            norm_cap: None,
        })
    }

    /// Enables projection of each gating column onto `‖η_k‖ ≤ cap`.
    pub fn with_norm_cap(mut self, cap: Option<f64>) -> Self {
        self.norm_cap = cap;
        self
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// One MM step from `e_old` with responsibilities `gamma`.
    pub fn mm_step(
        &self,
        e_old: &GatingParams,
        gamma: &ResponsibilityMatrix,
    ) -> Result<GatingParams> {
        check_dims(e_old, &self.t, gamma)?;
        if e_old.k == 1 {
            return Ok(e_old.clone());
        }
        let probs = e_old.log_prob_matrix(&self.t).map(f64::exp);
        self.mm_step_with_probs(e_old, gamma, &probs)
    }

    /// As [`GatingDesign::mm_step`], reusing gating probabilities already evaluated at `e_old`.
    pub(crate) fn mm_step_with_probs(
        &self,
        e_old: &GatingParams,
        gamma: &ResponsibilityMatrix,
        probs: &DMatrix<f64>,
    ) -> Result<GatingParams> {
        if e_old.k == 1 {
            return Ok(e_old.clone());
        }
        let km1 = e_old.k - 1;
        let g = self
            .t
            .tr_mul(&(gamma.matrix().columns(0, km1) - probs.columns(0, km1)));
        // G (I + 11ᵀ): add each row's total to every entry of that row.
        let row_sums = g.column_sum();
        let mut gc = g;
        for mut col in gc.column_iter_mut() {
            col += &row_sums;
        }
        let step = &self.gram_inv * gc * 2.0;
        let mut next = GatingParams {
            coef: &e_old.coef + step,
            k: e_old.k,
        };
        if let Some(cap) = self.norm_cap {
            next.project(cap);
        }
        if next.coef.iter().any(|v| !v.is_finite()) {
            return Err(SalMoeError::InvalidParameter(
                "gating update produced non-finite values".into(),
            ));
        }
        Ok(next)
    }

    /// Quadratic minorizer `M(E | E_old)` of the gating Q-function.
    pub fn minorizer(
        &self,
        e: &GatingParams,
        e_old: &GatingParams,
        gamma: &ResponsibilityMatrix,
    ) -> Result<f64> {
        check_dims(e, &self.t, gamma)?;
        check_dims(e_old, &self.t, gamma)?;
        let q_old = gating_q(e_old, &self.t, gamma)?;
        let g = score_unchecked(e_old, &self.t, gamma);
        let delta = &e.coef - &e_old.coef;
        let linear = delta.dot(&g);
        // vec(Δ)ᵀ (C ⊗ TᵀT) vec(Δ) = tr(Δᵀ TᵀT Δ C) with C = I - 11ᵀ/K.
        let k = e.k as f64;
        let m_delta = &self.gram * &delta;
        let inner = delta.dot(&m_delta);
        let colsum = m_delta.column_sum();
        let dsum = delta.column_sum();
        let quad_c = inner - dsum.dot(&colsum) / k;
        Ok(q_old + linear - 0.25 * quad_c)
    }
}

/// One MM update of the gating coefficients (see module docs).
pub fn mm_update(
    e_old: &GatingParams,
    t: &DMatrix<f64>,
    gamma: &ResponsibilityMatrix,
) -> Result<GatingParams> {
    GatingDesign::new(t)?.mm_step(e_old, gamma)
}

/// Value of the quadratic minorizer at `e`, built around `e_old`.
pub fn minorizer_value(
    e: &GatingParams,
    e_old: &GatingParams,
    t: &DMatrix<f64>,
    gamma: &ResponsibilityMatrix,
) -> Result<f64> {
    GatingDesign::new(t)?.minorizer(e, e_old, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn col(q: usize, vals: &[f64]) -> GatingParams {
        GatingParams::from_columns(&[vals.to_vec()], q).unwrap()
    }

    #[test]
    fn zero_coefficients_give_uniform_gates() {
        for k in 1..6 {
            let e = GatingParams::zeros(2, k);
            let p = gating_probs(&e, &[1.0, 0.3, -2.0]).unwrap();
            for v in p {
                assert_relative_eq!(v, 1.0 / k as f64, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn logistic_gate_values() {
        let e = col(1, &[0.0, 10.0]);
        let p = gating_probs(&e, &[1.0, 0.5]).unwrap();
        assert_relative_eq!(p[0], 1.0 / (1.0 + (-5f64).exp()), epsilon = 1e-15);
        assert_relative_eq!(p[0], 0.993_307_149_075_715_1, epsilon = 1e-12);
        let p = gating_probs(&e, &[1.0, -0.5]).unwrap();
        assert_relative_eq!(p[0], 0.006_692_850_924_284_856, epsilon = 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let e = col(1, &[0.0, 1.0]);
        assert!(matches!(
            gating_probs(&e, &[1.0]),
            Err(SalMoeError::DimensionMismatch(_))
        ));
        let t = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let g = ResponsibilityMatrix::from_labels(&[0, 1], 2).unwrap();
        assert!(gating_q(&e, &t, &g).is_err());
    }

    #[test]
    fn q_at_zero_is_minus_n_log_k() {
        let t = DMatrix::from_fn(
            10,
            2,
            |i, j| if j == 0 { 1.0 } else { i as f64 / 10.0 - 0.5 },
        );
        let gamma = ResponsibilityMatrix::new(DMatrix::from_fn(10, 2, |i, j| {
            let a = (i as f64 + 1.0) / 12.0;
            if j == 0 {
                a
            } else {
                1.0 - a
            }
        }))
        .unwrap();
        let q = gating_q(&GatingParams::zeros(1, 2), &t, &gamma).unwrap();
        assert_relative_eq!(q, -10.0 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn saturated_gates_push_q_toward_zero() {
        let t = DMatrix::from_row_slice(4, 2, &[1.0, -1.0, 1.0, -0.5, 1.0, 0.5, 1.0, 1.0]);
        let gamma = ResponsibilityMatrix::from_labels(&[1, 1, 0, 0], 2).unwrap();
        let mut last = f64::NEG_INFINITY;
        for scale in [1.0, 5.0, 20.0, 80.0] {
            let q = gating_q(&col(1, &[0.0, scale]), &t, &gamma).unwrap();
            assert!(q <= 0.0 && q > last);
            last = q;
        }
        assert!(last > -1e-10);
    }

    #[test]
    fn hand_evaluated_score() {
        let t = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let gamma = ResponsibilityMatrix::from_labels(&[0], 2).unwrap();
        let g = gating_score(&GatingParams::zeros(1, 2), &t, &gamma).unwrap();
        assert_relative_eq!(g[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(g[(1, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn fixed_point_when_responsibilities_equal_gates() {
        let t = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { i as f64 - 2.5 });
        let e = GatingParams::from_columns(&[vec![0.2, -0.4], vec![-0.1, 0.3]], 1).unwrap();
        let gamma = ResponsibilityMatrix::new(e.log_prob_matrix(&t).map(f64::exp)).unwrap();
        let g = gating_score(&e, &t, &gamma).unwrap();
        assert!(g.amax() < 1e-14);
        let next = mm_update(&e, &t, &gamma).unwrap();
        assert!((next.coef() - e.coef()).amax() < 1e-14);
    }

    #[test]
    fn constant_covariate_is_singular_design() {
        let t = DMatrix::from_fn(5, 2, |_, j| if j == 0 { 1.0 } else { 3.0 });
        assert!(matches!(
            GatingDesign::new(&t),
            Err(SalMoeError::SingularDesign(_))
        ));
        let t = DMatrix::from_fn(5, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 * i as f64,
        });
        assert!(matches!(
            GatingDesign::new(&t),
            Err(SalMoeError::SingularDesign(_))
        ));
    }

    #[test]
    fn c_inverse_closed_form() {
        for k in 2..=6usize {
            let m = k - 1;
            let ones = DMatrix::from_element(m, m, 1.0);
            let c = DMatrix::identity(m, m) - &ones / k as f64;
            let cinv = DMatrix::identity(m, m) + ones;
            assert!((c * cinv - DMatrix::identity(m, m)).amax() < 1e-14);
        }
    }

    #[test]
    fn rebaselining_preserves_probabilities() {
        let e = GatingParams::from_columns(&[vec![0.3, 1.2], vec![-0.7, 0.4]], 1).unwrap();
        let mut full = e.full_matrix();
        for j in 0..3 {
            full[(0, j)] += 0.9;
            full[(1, j)] -= 2.1;
        }
        let shifted = GatingParams::from_unpinned(&full).unwrap();
        let a = gating_probs(&e, &[1.0, 0.37]).unwrap();
        let b = gating_probs(&shifted, &[1.0, 0.37]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_caps_column_norms() {
        let mut e = col(1, &[3.0, 4.0]);
        e.project(1.0);
        assert_relative_eq!(e.coef().column(0).norm(), 1.0, epsilon = 1e-15);
    }
}
