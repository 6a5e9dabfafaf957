//! Scenario specifications and the seeded data generator.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SalMoeError};
use crate::expert::{Expert, GaussianExpert, SkewNormalExpert};
use crate::gating::GatingParams;
use crate::model::{Dataset, GaussianMoeModel, MoeModel, SalMoeModel, SkewNormalMoeModel};
use crate::sal::SalParams;

/// Response assigned to contaminating points.
pub const NOISE_RESPONSE: f64 = -2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertFamily {
    Sal,
    Gaussian,
    SkewNormal,
}

/// Covariates: `x = t = (1, u_1, …, u_d)` with `u_j ~ U(-1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateDesign {
    Uniform1,
    Uniform3,
}

impl CovariateDesign {
    pub fn dim(self) -> usize {
        match self {
            CovariateDesign::Uniform1 => 1,
            CovariateDesign::Uniform3 => 3,
        }
    }
}

/// A data-generating mixture of experts plus sample size and contamination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub family: ExpertFamily,
    #[serde(rename = "K")]
    pub k: usize,
    /// Free gating columns `η_1 … η_{K-1}`.
    pub gating: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    /// SAL and Gaussian: variance parameter; skew-normal: scale.
    pub sigma: Vec<f64>,
    /// SAL skewness.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<Vec<f64>>,
    /// Skew-normal shape.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<Vec<f64>>,
    pub n: usize,
    pub design: CovariateDesign,
    /// Fraction of rows replaced by noise points.
    pub contamination: f64,
}

/// The generating model in its own family.
#[derive(Debug, Clone, PartialEq)]
pub enum TrueModel {
    Sal(SalMoeModel),
    Gaussian(GaussianMoeModel),
    SkewNormal(SkewNormalMoeModel),
}

impl TrueModel {
    pub fn predict_means(&self, d: &Dataset) -> Result<Vec<f64>> {
        match self {
            TrueModel::Sal(m) => m.predict_means(d),
            TrueModel::Gaussian(m) => m.predict_means(d),
            TrueModel::SkewNormal(m) => m.predict_means(d),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, x: &DMatrix<f64>) -> (Vec<f64>, Vec<usize>) {
        match self {
            TrueModel::Sal(m) => m.sample_responses(rng, x, x),
            TrueModel::Gaussian(m) => m.sample_responses(rng, x, x),
            TrueModel::SkewNormal(m) => m.sample_responses(rng, x, x),
        }
    }
}

fn build<E: Expert>(experts: Vec<E>, spec: &ScenarioSpec) -> Result<MoeModel<E>> {
    let q = spec.design.dim();
    let gating = GatingParams::from_columns(&spec.gating, q)
        .map_err(|e| SalMoeError::InvalidSpec(e.to_string()))?;
    MoeModel::new(experts, gating).map_err(|e| SalMoeError::InvalidSpec(e.to_string()))
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SalMoeError::InvalidSpec(m));
        let width = self.design.dim() + 1;
        if self.k == 0 || self.n == 0 {
            return bad("K and n must be positive".into());
        }
        if self.gating.len() + 1 != self.k || self.gating.iter().any(|g| g.len() != width) {
            return bad(format!(
                "gating must have K-1 = {} columns of length {width}",
                self.k - 1
            ));
        }
        if self.beta.len() != self.k || self.beta.iter().any(|b| b.len() != width) {
            return bad(format!(
                "beta must have K = {} rows of length {width}",
                self.k
            ));
        }
        if self.sigma.len() != self.k || self.sigma.iter().any(|s| !(*s > 0.0)) {
            return bad("sigma must have K positive entries".into());
        }
        let shape_ok = |v: &Option<Vec<f64>>| v.as_ref().map_or(false, |v| v.len() == self.k);
        match self.family {
            ExpertFamily::Sal if !shape_ok(&self.alpha) => {
                return bad("SAL family needs K alpha values".into())
            }
            ExpertFamily::SkewNormal if !shape_ok(&self.lambda) => {
                return bad("skew-normal family needs K lambda values".into())
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.contamination) {
            return bad(format!(
                "contamination {} is outside [0, 1]",
                self.contamination
            ));
        }
        Ok(())
    }

    /// The generating model.
    pub fn truth(&self) -> Result<TrueModel> {
        self.validate()?;
        let k = self.k;
        Ok(match self.family {
            ExpertFamily::Sal => {
                let alpha = self.alpha.as_ref().unwrap();
                let experts = (0..k)
                    .map(|c| SalParams::new(alpha[c], self.sigma[c], self.beta[c].clone()))
                    .collect::<Result<Vec<_>>>()?;
                TrueModel::Sal(build(experts, self)?)
            }
            ExpertFamily::Gaussian => {
                let experts = (0..k)
                    .map(|c| GaussianExpert::new(self.sigma[c], self.beta[c].clone()))
                    .collect::<Result<Vec<_>>>()?;
                TrueModel::Gaussian(build(experts, self)?)
            }
            ExpertFamily::SkewNormal => {
                let lambda = self.lambda.as_ref().unwrap();
                let experts = (0..k)
                    .map(|c| SkewNormalExpert::new(lambda[c], self.sigma[c], self.beta[c].clone()))
                    .collect::<Result<Vec<_>>>()?;
                TrueModel::SkewNormal(build(experts, self)?)
            }
        })
    }

    /// The generating model as a SALMoE (SAL family only).
    pub fn truth_sal(&self) -> Result<SalMoeModel> {
        match self.truth()? {
            TrueModel::Sal(m) => Ok(m),
            _ => Err(SalMoeError::InvalidSpec(
                "scenario is not SAL-generated".into(),
            )),
        }
    }

    /// Number of contaminated rows, `⌈c·n⌉`.
    pub fn noise_count(&self) -> usize {
        // Guard against products such as 0.07 * 100 = 7.000000000000001.
        ((self.contamination * self.n as f64) - 1e-9)
            .ceil()
            .max(0.0) as usize
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_contamination(mut self, c: f64) -> Self {
        self.contamination = c;
        self
    }
}

fn uniform_design<R: Rng + ?Sized>(rng: &mut R, n: usize, dim: usize) -> DMatrix<f64> {
    let mut x = DMatrix::from_element(n, dim + 1, 1.0);
    for i in 0..n {
        for j in 1..=dim {
            x[(i, j)] = rng.gen_range(-1.0..1.0);
        }
    }
    x
}

/// Draws covariates, then labels and responses, then contamination.
/// Generative labels (1-based) and the noise mask are attached.
pub fn generate<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<Dataset> {
    let truth = spec.truth()?;
    let dim = spec.design.dim();
    let mut x = uniform_design(rng, spec.n, dim);
    let (mut y, z) = truth.sample(rng, &x);
    let mut noise = vec![false; spec.n];
    let m = spec.noise_count();
    if m > 0 {
        for i in sample(rng, spec.n, m).into_vec() {
            for j in 1..=dim {
                x[(i, j)] = rng.gen_range(-1.0..1.0);
            }
            y[i] = NOISE_RESPONSE;
            noise[i] = true;
        }
    }
    Dataset::new(y, x.clone(), x)?
        .with_labels(z)?
        .with_noise_mask(noise)
}

/// Table-1 parameters with the given family; `shape` is α for SAL and λ for skew-normal.
pub fn table1_spec(family: ExpertFamily, shape: Option<f64>) -> ScenarioSpec {
    let alpha = (family == ExpertFamily::Sal).then(|| shape.map_or(vec![1.0, 0.8], |a| vec![a; 2]));
    let lambda = (family == ExpertFamily::SkewNormal).then(|| vec![shape.unwrap_or(20.0); 2]);
    ScenarioSpec {
        family,
        k: 2,
        gating: vec![vec![0.0, 10.0]],
        beta: vec![vec![0.0, 1.0], vec![0.0, -1.0]],
        sigma: vec![0.1, 0.1],
        alpha,
        lambda,
        n: 500,
        design: CovariateDesign::Uniform1,
        contamination: 0.0,
    }
}

/// Three-covariate SAL scenario.
pub fn scenario2_spec() -> ScenarioSpec {
    ScenarioSpec {
        family: ExpertFamily::Sal,
        k: 2,
        gating: vec![vec![0.0, 5.0, -2.0, 10.0]],
        beta: vec![vec![0.0, -1.0, 0.5, 1.0], vec![0.0, 1.0, 0.5, -1.0]],
        sigma: vec![0.1, 0.1],
        alpha: Some(vec![1.0, 0.8]),
        lambda: None,
        n: 500,
        design: CovariateDesign::Uniform3,
        contamination: 0.0,
    }
}

/// Three-component designs of the order-selection study.
pub fn three_component_spec(family: ExpertFamily) -> ScenarioSpec {
    ScenarioSpec {
        family,
        k: 3,
        gating: vec![vec![0.0, 10.0], vec![0.0, 10.0]],
        beta: vec![vec![0.0, 1.0], vec![0.0, -1.0], vec![1.0, -1.0]],
        sigma: vec![0.1; 3],
        alpha: (family == ExpertFamily::Sal).then(|| vec![1.0; 3]),
        lambda: (family == ExpertFamily::SkewNormal).then(|| vec![20.0; 3]),
        n: 500,
        design: CovariateDesign::Uniform1,
        contamination: 0.0,
    }
}
