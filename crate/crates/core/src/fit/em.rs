//! The generalized EM loop shared by the SAL and Gaussian fitters.

use nalgebra::DMatrix;

use super::mstep::{gaussian_m_step, latent_weights, m_step_expert_detailed};
use super::FitConfig;
use crate::error::{Result, SalMoeError};
use crate::expert::{Expert, GaussianExpert};
use crate::gating::{GatingDesign, GatingParams, ResponsibilityMatrix};
use crate::model::{Dataset, MoeModel};
use crate::sal::SalParams;

/// Per-component inputs to an expert update.
pub(crate) struct ComponentInput<'a> {
    pub d: &'a Dataset,
    pub gamma: &'a [f64],
    pub resid: &'a [f64],
    pub component: usize,
    pub sigma_min: f64,
    pub b_floor: f64,
}

/// Expert families with a closed-form M-step.
pub(crate) trait EmExpert: Expert {
    fn update(&self, input: &ComponentInput<'_>, scratch: &mut Scratch) -> Result<Self>;
}

#[derive(Default)]
pub(crate) struct Scratch {
    v2: Vec<f64>,
    v3: Vec<f64>,
}

impl EmExpert for SalParams {
    fn update(&self, input: &ComponentInput<'_>, scratch: &mut Scratch) -> Result<Self> {
        let n = input.resid.len();
        scratch.v2.resize(n, 0.0);
        scratch.v3.resize(n, 0.0);
        latent_weights(
            input.resid,
            self.alpha,
            self.sigma,
            input.b_floor,
            &mut scratch.v2,
            &mut scratch.v3,
        );
        let out = m_step_expert_detailed(
            input.d,
            input.gamma,
            &scratch.v2,
            &scratch.v3,
            input.sigma_min,
            input.component,
        )?;
        Ok(out.params)
    }
}

impl EmExpert for GaussianExpert {
    fn update(&self, input: &ComponentInput<'_>, _scratch: &mut Scratch) -> Result<Self> {
        gaussian_m_step(input.d, input.gamma, input.sigma_min, input.component)
    }
}

/// Buffers reused across iterations: residuals, gating probabilities and responsibilities.
pub(crate) struct Workspace {
    pub resid: DMatrix<f64>,
    pub probs: DMatrix<f64>,
    pub gamma: ResponsibilityMatrix,
    logits: DMatrix<f64>,
    betas: DMatrix<f64>,
    terms: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize, k: usize, p: usize) -> Self {
        Self {
            resid: DMatrix::zeros(n, k),
            probs: DMatrix::zeros(n, k),
            gamma: ResponsibilityMatrix::new_unchecked(DMatrix::zeros(n, k)),
            logits: DMatrix::zeros(n, k.saturating_sub(1)),
            betas: DMatrix::zeros(p + 1, k),
            terms: vec![0.0; k],
        }
    }

    /// Evaluates the log-likelihood at `m`, filling residuals, gates and responsibilities.
    pub fn evaluate<E: Expert>(&mut self, m: &MoeModel<E>, d: &Dataset) -> Result<f64> {
        let k = m.k();
        for (c, e) in m.experts().iter().enumerate() {
            for (j, b) in e.beta().iter().enumerate() {
                self.betas[(j, c)] = *b;
            }
        }
        self.resid.gemm(-1.0, d.x(), &self.betas, 0.0);
        for c in 0..k {
            self.resid.column_mut(c).axpy(1.0, d.y(), 1.0);
        }
        if k > 1 {
            self.logits.gemm(1.0, d.t(), m.gating().coef(), 0.0);
        }
        let gamma = self.gamma.matrix_mut();
        let mut total = 0.0;
        for i in 0..d.n() {
            let mut gmax = 0.0f64;
            for c in 0..k - 1 {
                gmax = gmax.max(self.logits[(i, c)]);
            }
            let mut gsum = 0.0;
            for c in 0..k {
                let l = if c + 1 < k { self.logits[(i, c)] } else { 0.0 } - gmax;
                self.terms[c] = l;
                gsum += l.exp();
            }
            let glse = gsum.ln();
            let mut tmax = f64::NEG_INFINITY;
            for (c, e) in m.experts().iter().enumerate() {
                let lp = self.terms[c] - glse;
                self.probs[(i, c)] = lp.exp();
                let r = self.resid[(i, c)];
                let t = lp + e.log_density(r, 0.0);
                self.terms[c] = t;
                tmax = tmax.max(t);
            }
            if !tmax.is_finite() {
                return Err(SalMoeError::NumericalFailure(format!(
                    "row {i} has zero likelihood"
                )));
            }
            let mut s = 0.0;
            for c in 0..k {
                let w = (self.terms[c] - tmax).exp();
                gamma[(i, c)] = w;
                s += w;
            }
            for c in 0..k {
                gamma[(i, c)] /= s;
            }
            total += tmax + s.ln();
        }
        if !total.is_finite() {
            return Err(SalMoeError::NumericalFailure(
                "non-finite log-likelihood".into(),
            ));
        }
        Ok(total)
    }
}

/// Outcome of one run of the loop.
#[derive(Debug, Clone)]
pub(crate) struct RawFit<E> {
    pub model: MoeModel<E>,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub gamma: ResponsibilityMatrix,
}

/// Runs at most `max_iter` E / M / MM iterations from `init`.
pub(crate) fn run_em<E: EmExpert>(
    d: &Dataset,
    cfg: &FitConfig,
    init: &MoeModel<E>,
    design: Option<&GatingDesign>,
    max_iter: usize,
) -> Result<RawFit<E>> {
    init.check_dataset(d)?;
    let k = init.k();
    let mut ws = Workspace::new(d.n(), k, init.p());
    let mut scratch = Scratch::default();
    let mut model = init.clone();
    let mut ll = ws.evaluate(&model, d)?;
    let mut trace = vec![ll];
    let mut converged = false;
    let n = d.n();
    for _ in 0..max_iter {
        let mut experts = Vec::with_capacity(k);
        for (c, e) in model.experts().iter().enumerate() {
            let input = ComponentInput {
                d,
                gamma: &ws.gamma.matrix().as_slice()[c * n..(c + 1) * n],
                resid: &ws.resid.as_slice()[c * n..(c + 1) * n],
                component: c + 1,
                sigma_min: cfg.sigma_min,
                b_floor: cfg.b_floor,
            };
            experts.push(e.update(&input, &mut scratch)?);
        }
        let gating: GatingParams = match design {
            Some(des) if k > 1 => des.mm_step_with_probs(model.gating(), &ws.gamma, &ws.probs)?,
            _ => model.gating().clone(),
        };
        model = MoeModel::from_parts_unchecked(experts, gating);
        let next = ws.evaluate(&model, d)?;
        trace.push(next);
        let rel = (next - ll) / ll.abs();
        ll = next;
        if rel < cfg.epsilon {
            converged = true;
            break;
        }
    }
    Ok(RawFit {
        model,
        trace,
        converged,
        gamma: ws.gamma,
    })
}
