//! Mixture-of-experts model object and dataset.
//!
//! [`MoeModel`] is generic over the expert family; [`SalMoeModel`] is the
//! model this crate fits and [`GaussianMoeModel`] is the Gaussian-expert
//! comparator. All densities are assembled in log space.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, SalMoeError};
use crate::expert::{dot, Expert, GaussianExpert, SkewNormalExpert};
use crate::gating::{GatingParams, ResponsibilityMatrix};
use crate::linalg::log_sum_exp;
use crate::sal::SalParams;

/// Half-width multiplier of the pointwise predictive interval.
pub const INTERVAL_SD_MULTIPLIER: f64 = 2.0;

/// Observations `(y_i, x_i, t_i)` with intercept columns included in `x` and `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    t: DMatrix<f64>,
    labels: Option<Vec<usize>>,
    noise: Option<Vec<bool>>,
}

impl Dataset {
    /// Validates shapes, finiteness and the leading intercept columns.
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, t: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(SalMoeError::InvalidData("dataset has no rows".into()));
        }
        if x.nrows() != n || t.nrows() != n {
            return Err(SalMoeError::DimensionMismatch(format!(
                "y has {n} rows but X has {} and T has {}",
                x.nrows(),
                t.nrows()
            )));
        }
        if x.ncols() == 0 || t.ncols() == 0 {
            return Err(SalMoeError::InvalidData(
                "design matrices need an intercept column".into(),
            ));
        }
        if y.iter()
            .chain(x.iter())
            .chain(t.iter())
            .any(|v| !v.is_finite())
        {
            return Err(SalMoeError::InvalidData(
                "dataset contains non-finite values".into(),
            ));
        }
        if x.column(0)
            .iter()
            .chain(t.column(0).iter())
            .any(|v| *v != 1.0)
        {
            return Err(SalMoeError::InvalidData(
                "first column of X and T must be all ones".into(),
            ));
        }
        Ok(Self {
            y: DVector::from_vec(y),
            x,
            t,
            labels: None,
            noise: None,
        })
    }

    /// Builds from raw covariate rows (without intercepts).
    pub fn from_rows(y: Vec<f64>, x_rows: &[Vec<f64>], t_rows: &[Vec<f64>]) -> Result<Self> {
        let design = |rows: &[Vec<f64>]| -> Result<DMatrix<f64>> {
            let width = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != width) {
                return Err(SalMoeError::DimensionMismatch(
                    "ragged covariate rows".into(),
                ));
            }
            Ok(DMatrix::from_fn(rows.len(), width + 1, |i, j| {
                if j == 0 {
                    1.0
                } else {
                    rows[i][j - 1]
                }
            }))
        };
        Self::new(y, design(x_rows)?, design(t_rows)?)
    }

    /// Attaches generative labels (1-based), used only for scoring.
    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(SalMoeError::DimensionMismatch(
                "label vector length differs from n".into(),
            ));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Marks rows that were replaced by contamination.
    pub fn with_noise_mask(mut self, noise: Vec<bool>) -> Result<Self> {
        if noise.len() != self.n() {
            return Err(SalMoeError::DimensionMismatch(
                "noise mask length differs from n".into(),
            ));
        }
        self.noise = Some(noise);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Expert covariate count (excluding the intercept).
    pub fn p(&self) -> usize {
        self.x.ncols() - 1
    }

    /// Gating covariate count (excluding the intercept).
    pub fn q(&self) -> usize {
        self.t.ncols() - 1
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn noise_mask(&self) -> Option<&[bool]> {
        self.noise.as_deref()
    }

    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn t_row(&self, i: usize) -> Vec<f64> {
        self.t.row(i).iter().copied().collect()
    }

    /// Rows selected by `indices` (repeats allowed).
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            y: DVector::from_fn(indices.len(), |i, _| self.y[indices[i]]),
            x: self.x.select_rows(indices),
            t: self.t.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            noise: self
                .noise
                .as_ref()
                .map(|m| indices.iter().map(|&i| m[i]).collect()),
        }
    }

    /// The dataset stacked `times` times.
    pub fn repeated(&self, times: usize) -> Self {
        let idx: Vec<usize> = (0..times).flat_map(|_| 0..self.n()).collect();
        self.subset(&idx)
    }
}

/// Pointwise predictive summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
    pub lower: f64,
    pub upper: f64,
}

/// A `K`-component mixture of experts with multinomial-logit gates.
#[derive(Debug, Clone, PartialEq)]
pub struct MoeModel<E> {
    experts: Vec<E>,
    gating: GatingParams,
    p: usize,
    q: usize,
}

/// Shifted asymmetric Laplace mixture of experts.
pub type SalMoeModel = MoeModel<SalParams>;
/// Gaussian mixture of experts.
pub type GaussianMoeModel = MoeModel<GaussianExpert>;
/// Skew-normal mixture of experts (data generation only).
pub type SkewNormalMoeModel = MoeModel<SkewNormalExpert>;

impl<E: Expert> MoeModel<E> {
    pub fn new(experts: Vec<E>, gating: GatingParams) -> Result<Self> {
        let k = experts.len();
        if k == 0 {
            return Err(SalMoeError::InvalidParameter(
                "a model needs at least one expert".into(),
            ));
        }
        if gating.k() != k {
            return Err(SalMoeError::DimensionMismatch(format!(
                "gating has K={} but {k} experts were given",
                gating.k()
            )));
        }
        let width = experts[0].beta().len();
        if width == 0 || experts.iter().any(|e| e.beta().len() != width) {
            return Err(SalMoeError::DimensionMismatch(
                "expert beta lengths differ".into(),
            ));
        }
        let q = gating.q();
        Ok(Self {
            experts,
            gating,
            p: width - 1,
            q,
        })
    }

    pub fn k(&self) -> usize {
        self.experts.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn experts(&self) -> &[E] {
        &self.experts
    }

    pub fn gating(&self) -> &GatingParams {
        &self.gating
    }

    pub(crate) fn from_parts_unchecked(experts: Vec<E>, gating: GatingParams) -> Self {
        let p = experts[0].beta().len() - 1;
        let q = gating.q();
        Self {
            experts,
            gating,
            p,
            q,
        }
    }

    pub(crate) fn check_dataset(&self, d: &Dataset) -> Result<()> {
        if d.p() != self.p || d.q() != self.q {
            return Err(SalMoeError::DimensionMismatch(format!(
                "model has (p, q) = ({}, {}), dataset has ({}, {})",
                self.p,
                self.q,
                d.p(),
                d.q()
            )));
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64], t: &[f64]) -> Result<()> {
        if x.len() != self.p + 1 || t.len() != self.q + 1 {
            return Err(SalMoeError::DimensionMismatch(format!(
                "expected x of length {} and t of length {}, got {} and {}",
                self.p + 1,
                self.q + 1,
                x.len(),
                t.len()
            )));
        }
        Ok(())
    }

    /// Locations `Xβ_k`, one vector per expert.
    pub fn locations(&self, d: &Dataset) -> Vec<DVector<f64>> {
        self.experts
            .iter()
            .map(|e| d.x() * DVector::from_column_slice(e.beta()))
            .collect()
    }

    /// `n × K` matrix of `log π_k(t_i) + log g_k(y_i)`.
    pub fn component_log_terms(&self, d: &Dataset) -> Result<DMatrix<f64>> {
        self.check_dataset(d)?;
        let mut terms = self.gating.log_prob_matrix(d.t());
        for (k, (e, mu)) in self.experts.iter().zip(self.locations(d)).enumerate() {
            for i in 0..d.n() {
                terms[(i, k)] += e.log_density(d.y()[i], mu[i]);
            }
        }
        Ok(terms)
    }

    /// `log f(y | x, t)`.
    pub fn mixture_log_density(&self, y: f64, x: &[f64], t: &[f64]) -> Result<f64> {
        self.check_point(x, t)?;
        let mut terms = vec![0.0; self.k()];
        self.gating.log_probs_into(t, &mut terms);
        for (term, e) in terms.iter_mut().zip(&self.experts) {
            *term += e.log_density(y, e.location(x));
        }
        Ok(log_sum_exp(&terms))
    }

    /// Observed-data log-likelihood.
    pub fn log_likelihood(&self, d: &Dataset) -> Result<f64> {
        Ok(self.loglik_and_responsibilities(d)?.0)
    }

    /// Posterior responsibilities `γ_ik`.
    pub fn responsibilities(&self, d: &Dataset) -> Result<ResponsibilityMatrix> {
        Ok(self.loglik_and_responsibilities(d)?.1)
    }

    /// Log-likelihood and responsibilities from one pass over the data.
    pub fn loglik_and_responsibilities(&self, d: &Dataset) -> Result<(f64, ResponsibilityMatrix)> {
        let mut terms = self.component_log_terms(d)?;
        let k = self.k();
        let mut total = 0.0;
        let mut row = vec![0.0; k];
        for i in 0..d.n() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = terms[(i, j)];
            }
            let lse = log_sum_exp(&row);
            total += lse;
            if lse.is_finite() {
                let mut s = 0.0;
                for j in 0..k {
                    let g = (row[j] - lse).exp();
                    terms[(i, j)] = g;
                    s += g;
                }
                for j in 0..k {
                    terms[(i, j)] /= s;
                }
            } else {
                for j in 0..k {
                    terms[(i, j)] = 1.0 / k as f64;
                }
            }
        }
        Ok((total, ResponsibilityMatrix::new_unchecked(terms)))
    }

    /// Predictive mean, variance and `mean ± 2 sd` interval.
    pub fn predict(&self, x: &[f64], t: &[f64]) -> Result<Prediction> {
        self.check_point(x, t)?;
        let mut lp = vec![0.0; self.k()];
        self.gating.log_probs_into(t, &mut lp);
        let means: Vec<f64> = self
            .experts
            .iter()
            .map(|e| e.location(x) + e.mean_offset())
            .collect();
        let mean: f64 = lp.iter().zip(&means).map(|(l, m)| l.exp() * m).sum();
        let variance: f64 = lp
            .iter()
            .zip(&means)
            .zip(&self.experts)
            .map(|((l, m), e)| l.exp() * (e.variance() + (m - mean).powi(2)))
            .sum();
        let sd = variance.sqrt();
        Ok(Prediction {
            mean,
            variance,
            lower: mean - INTERVAL_SD_MULTIPLIER * sd,
            upper: mean + INTERVAL_SD_MULTIPLIER * sd,
        })
    }

    /// Predictive mean for every row of `d`.
    pub fn predict_means(&self, d: &Dataset) -> Result<Vec<f64>> {
        self.check_dataset(d)?;
        let lp = self.gating.log_prob_matrix(d.t());
        let locs = self.locations(d);
        Ok((0..d.n())
            .map(|i| {
                self.experts
                    .iter()
                    .enumerate()
                    .map(|(k, e)| lp[(i, k)].exp() * (locs[k][i] + e.mean_offset()))
                    .sum()
            })
            .collect())
    }

    /// MAP labels (1-based; the smallest index wins ties).
    pub fn map_cluster(&self, d: &Dataset) -> Result<Vec<usize>> {
        Ok(self
            .responsibilities(d)?
            .map_labels()
            .into_iter()
            .map(|k| k + 1)
            .collect())
    }

    /// Classification log-likelihood at the MAP allocation.
    pub fn classification_loglik(&self, d: &Dataset) -> Result<f64> {
        let (_, gamma) = self.loglik_and_responsibilities(d)?;
        let terms = self.component_log_terms(d)?;
        Ok(gamma
            .map_labels()
            .iter()
            .enumerate()
            .map(|(i, &k)| terms[(i, k)])
            .sum())
    }

    /// Reorders components so that new component `j` is old component `perm[j]`,
    /// re-baselining the gates onto the new last component.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let k = self.k();
        if perm.len() != k || !perm.iter().copied().sorted().eq(0..k) {
            return Err(SalMoeError::InvalidParameter(format!(
                "{perm:?} is not a permutation of 0..{k}"
            )));
        }
        let experts = perm.iter().map(|&j| self.experts[j].clone()).collect();
        let full = self.gating.full_matrix();
        let reordered = full.select_columns(perm);
        let gating = GatingParams::from_unpinned(&reordered)?;
        Ok(Self::from_parts_unchecked(experts, gating))
    }

    /// Canonical component order: ascending intercept, then shape, then scale.
    /// Returns the reordered model and the permutation (`new j ← old perm[j]`).
    pub fn canonicalize(&self) -> (Self, Vec<usize>) {
        let perm: Vec<usize> = (0..self.k())
            .sorted_by(|&a, &b| {
                let (ka, kb) = (self.experts[a].order_key(), self.experts[b].order_key());
                ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
            })
            .collect();
        let model = self
            .permuted(&perm)
            .expect("sorted indices form a permutation");
        (model, perm)
    }

    /// Named scalar parameters in reporting order: gating, betas, then shapes.
    pub fn named_parameters(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for k in 0..self.k() - 1 {
            for j in 0..=self.q {
                out.push((format!("eta_{}{}", k + 1, j), self.gating.coef()[(j, k)]));
            }
        }
        for (k, e) in self.experts.iter().enumerate() {
            for (j, b) in e.beta().iter().enumerate() {
                out.push((format!("beta_{}{}", k + 1, j), *b));
            }
        }
        let shape_names: Vec<&str> = self.experts[0]
            .shape_params()
            .iter()
            .map(|(n, _)| *n)
            .collect();
        for name in shape_names {
            for (k, e) in self.experts.iter().enumerate() {
                let v = e
                    .shape_params()
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, v)| v)
                    .unwrap();
                out.push((format!("{name}_{}", k + 1), v));
            }
        }
        out
    }

    /// Draws `y` for each row of a covariate design, returning `(y, z)` with 1-based `z`.
    pub fn sample_responses<R: rand::Rng + ?Sized>(
        &self,
        rng: &mut R,
        x: &DMatrix<f64>,
        t: &DMatrix<f64>,
    ) -> (Vec<f64>, Vec<usize>) {
        let n = x.nrows();
        let mut y = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        let mut lp = vec![0.0; self.k()];
        for i in 0..n {
            let t_row: Vec<f64> = t.row(i).iter().copied().collect();
            let x_row: Vec<f64> = x.row(i).iter().copied().collect();
            self.gating.log_probs_into(&t_row, &mut lp);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut comp = self.k() - 1;
            for (k, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    comp = k;
                    break;
                }
            }
            let e = &self.experts[comp];
            y.push(e.sample(rng, dot(&x_row, e.beta())));
            z.push(comp + 1);
        }
        (y, z)
    }
}

impl ResponsibilityMatrix {
    /// Columns reordered so that new column `j` is old column `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::new_unchecked(self.matrix().select_columns(perm))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelJson<E> {
    #[serde(rename = "K")]
    k: usize,
    p: usize,
    q: usize,
    experts: Vec<E>,
    gating: Vec<Vec<f64>>,
}

impl<E: Expert> Serialize for MoeModel<E> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let coef = self.gating.coef();
        ModelJson {
            k: self.k(),
            p: self.p,
            q: self.q,
            experts: self.experts.clone(),
            gating: (0..coef.nrows())
                .map(|r| coef.row(r).iter().copied().collect())
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de, E: Expert> Deserialize<'de> for MoeModel<E> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let raw = ModelJson::<E>::deserialize(d)?;
        if raw.gating.len() != raw.q + 1 || raw.gating.iter().any(|r| r.len() + 1 != raw.k) {
            return Err(D::Error::custom(format!(
                "gating must be a {}×{} matrix",
                raw.q + 1,
                raw.k.saturating_sub(1)
            )));
        }
        let coef = DMatrix::from_fn(raw.q + 1, raw.k - 1, |r, c| raw.gating[r][c]);
        let gating = GatingParams::new(coef, raw.k).map_err(D::Error::custom)?;
        let model = MoeModel::new(raw.experts, gating).map_err(D::Error::custom)?;
        if model.p != raw.p {
            return Err(D::Error::custom(
                "p does not match the expert coefficient length",
            ));
        }
        Ok(model)
    }
}
