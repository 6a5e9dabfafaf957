//! Hybrid EM-MM estimation.
//!
//! Each iteration runs an E-step (responsibilities and the latent-scale
//! moments `v2 = E[1/V]`, `v3 = E[V]`), closed-form expert updates in the
//! order β, α, σ, and a single MM step for the gating coefficients. The
//! observed-data log-likelihood is nondecreasing along the iterations.
//!
//! [`fit`] wraps [`initialize`] and [`em_mm_fit`]: restarts are screened with
//! a short run and the best one is iterated to convergence. [`gmoe_fit`] is the
//! same pipeline with Gaussian experts.

mod em;
mod init;
mod mstep;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SalMoeError};
use crate::expert::{Expert, GaussianExpert};
use crate::gating::ResponsibilityMatrix;
use crate::model::{Dataset, MoeModel, SalMoeModel};
use crate::sal::{SalParams, DEFAULT_B_FLOOR, DEFAULT_SIGMA_MIN};

pub(crate) use em::EmExpert;
pub use init::{
    initial_candidate, initialize, initialize_gaussian, random_partition, weighted_skewness,
    Candidate, Initialization, ALPHA_INIT_CLIP, PARTITION_ATTEMPTS,
};
pub use mstep::{
    expert_q_value, gaussian_m_step, m_step_expert, m_step_expert_detailed, MStepOutput,
    EMPTY_COMPONENT_MASS, SYSTEM_RCOND_MIN,
};

/// Estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub max_iter: usize,
    pub epsilon: f64,
    pub restarts: usize,
    pub seed: u64,
    pub sigma_min: f64,
    pub b_floor: f64,
    /// EM-MM iterations used to rank restarts.
    pub screen_iters: usize,
    /// Iteration cap of the Gaussian fit inside each initializer.
    pub init_gmoe_iters: usize,
    /// Optional bound on each gating column's Euclidean norm.
    pub gating_norm_cap: Option<f64>,
}

impl FitConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iter: 1000,
            epsilon: 1e-5,
            restarts: 30,
            seed: 0,
            sigma_min: DEFAULT_SIGMA_MIN,
            b_floor: DEFAULT_B_FLOOR,
            screen_iters: 10,
            init_gmoe_iters: 50,
            gating_norm_cap: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SalMoeError::InvalidParameter(m.into()));
        if self.k == 0 {
            return bad("K must be at least 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if !(self.sigma_min > 0.0 && self.b_floor > 0.0) {
            return bad("sigma_min and b_floor must be positive");
        }
        if let Some(cap) = self.gating_norm_cap {
            if !(cap > 0.0) {
                return bad("gating norm cap must be positive");
            }
        }
        Ok(())
    }
}

/// Responsibilities and latent-scale moments at the current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EStepState {
    pub gamma: ResponsibilityMatrix,
    /// `E[1/V | y]`, `n × K`.
    pub v2: DMatrix<f64>,
    /// `E[V | y]`, `n × K`.
    pub v3: DMatrix<f64>,
}

/// Result of a fit. The model is in canonical component order and the
/// responsibilities are permuted to match.
#[derive(Debug, Clone)]
pub struct FitReport<E = SalParams> {
    pub model: MoeModel<E>,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub best_restart: usize,
    pub failed_restarts: usize,
    pub seed: u64,
    pub responsibilities: ResponsibilityMatrix,
}

impl<E> FitReport<E> {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().unwrap()
    }
}

#[derive(Serialize)]
struct FitReportJson<'a, E: Expert> {
    #[serde(flatten)]
    model: &'a MoeModel<E>,
    loglik_trace: &'a [f64],
    iterations: usize,
    converged: bool,
    best_restart: usize,
    seed: u64,
}

impl<E: Expert> Serialize for FitReport<E> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FitReportJson {
            model: &self.model,
            loglik_trace: &self.loglik_trace,
            iterations: self.iterations,
            converged: self.converged,
            best_restart: self.best_restart,
            seed: self.seed,
        }
        .serialize(s)
    }
}

/// E-step at `m`: responsibilities and `(v2, v3)` for every observation and component.
pub fn e_step(m: &SalMoeModel, d: &Dataset, b_floor: f64) -> Result<EStepState> {
    if !(b_floor > 0.0) {
        return Err(SalMoeError::InvalidParameter(
            "b_floor must be positive".into(),
        ));
    }
    m.check_dataset(d)?;
    let mut ws = em::Workspace::new(d.n(), m.k(), m.p());
    ws.evaluate(m, d)?;
    let mut v2 = DMatrix::zeros(d.n(), m.k());
    let mut v3 = DMatrix::zeros(d.n(), m.k());
    for (c, e) in m.experts().iter().enumerate() {
        let mut c2 = vec![0.0; d.n()];
        let mut c3 = vec![0.0; d.n()];
        mstep::latent_weights(
            ws.resid.column(c).as_slice(),
            e.alpha,
            e.sigma,
            b_floor,
            &mut c2,
            &mut c3,
        );
        v2.column_mut(c).copy_from_slice(&c2);
        v3.column_mut(c).copy_from_slice(&c3);
    }
    Ok(EStepState {
        gamma: ws.gamma,
        v2,
        v3,
    })
}

fn finish<E: EmExpert>(
    raw: em::RawFit<E>,
    cfg: &FitConfig,
    best_restart: usize,
    failed: usize,
) -> FitReport<E> {
    let (model, perm) = raw.model.canonicalize();
    FitReport {
        model,
        iterations: raw.trace.len() - 1,
        loglik_trace: raw.trace,
        converged: raw.converged,
        best_restart,
        failed_restarts: failed,
        seed: cfg.seed,
        responsibilities: raw.gamma.permuted(&perm),
    }
}

fn from_init<E: EmExpert>(
    d: &Dataset,
    cfg: &FitConfig,
    init: &MoeModel<E>,
    max_iter: usize,
) -> Result<FitReport<E>> {
    cfg.validate()?;
    if init.k() != cfg.k {
        return Err(SalMoeError::DimensionMismatch(format!(
            "initial model has K={} but the configuration asks for K={}",
            init.k(),
            cfg.k
        )));
    }
    let design = init::gating_design(d, cfg)?;
    let raw = em::run_em(d, cfg, init, design.as_ref(), max_iter)?;
    Ok(finish(raw, cfg, 0, 0))
}

/// Iterates EM-MM from `init` until the relative log-likelihood increment
/// falls below `cfg.epsilon` or `cfg.max_iter` iterations have run.
pub fn em_mm_fit(d: &Dataset, cfg: &FitConfig, init: &SalMoeModel) -> Result<FitReport> {
    from_init(d, cfg, init, cfg.max_iter)
}

/// Gaussian-expert EM-MM from a given start.
pub fn gmoe_fit_from(
    d: &Dataset,
    cfg: &FitConfig,
    init: &MoeModel<GaussianExpert>,
) -> Result<FitReport<GaussianExpert>> {
    from_init(d, cfg, init, cfg.max_iter)
}

fn fit_ranked<E: EmExpert>(
    d: &Dataset,
    cfg: &FitConfig,
    init: Initialization<E>,
) -> Result<FitReport<E>> {
    let design = init::gating_design(d, cfg)?;
    let mut last_err = None;
    let mut failed = init.failures;
    for cand in &init.candidates {
        let remaining = cfg.max_iter.saturating_sub(cfg.screen_iters);
        match em::run_em(d, cfg, &cand.model, design.as_ref(), remaining) {
            Ok(raw) => return Ok(finish(raw, cfg, cand.restart, failed)),
            Err(e) => {
                failed += 1;
                last_err = Some(e);
            }
        }
    }
    Err(last_err.unwrap_or(SalMoeError::AllRestartsFailed(cfg.restarts)))
}

/// Multi-restart SALMoE fit: screen `cfg.restarts` initializers, then run
/// EM-MM to convergence from the best. Falls back to the next-ranked
/// restart if the best one fails.
pub fn fit(d: &Dataset, cfg: &FitConfig) -> Result<FitReport> {
    fit_ranked(d, cfg, initialize(d, cfg)?)
}

/// Multi-restart Gaussian MoE fit with the same protocol as [`fit`].
pub fn gmoe_fit(d: &Dataset, cfg: &FitConfig) -> Result<FitReport<GaussianExpert>> {
    fit_ranked(d, cfg, initialize_gaussian(d, cfg)?)
}
