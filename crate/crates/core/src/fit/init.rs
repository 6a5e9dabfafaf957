//! Random-partition initialization and restart screening.

use rand::Rng;
use rayon::prelude::*;

use super::em::{run_em, EmExpert, RawFit};
use super::mstep::gaussian_m_step;
use super::FitConfig;
use crate::error::{Result, SalMoeError};
use crate::expert::GaussianExpert;
use crate::gating::{GatingDesign, GatingParams, ResponsibilityMatrix};
use crate::model::{Dataset, MoeModel, SalMoeModel};
use crate::rng::{substream, SalRng};
use crate::sal::SalParams;

/// Attempts allowed to draw a partition whose groups are all large enough.
pub const PARTITION_ATTEMPTS: usize = 10;

/// Bound on the initial skewness parameter.
pub const ALPHA_INIT_CLIP: f64 = 2.0;

/// MM gating steps fitted to the initial hard partition.
pub const GATING_INIT_STEPS: usize = 20;

/// A screened restart.
#[derive(Debug, Clone)]
pub struct Candidate<E> {
    pub restart: usize,
    pub model: MoeModel<E>,
    pub screened_loglik: f64,
}

/// Screened restarts, best first, plus the number that failed.
#[derive(Debug, Clone)]
pub struct Initialization<E> {
    pub candidates: Vec<Candidate<E>>,
    pub failures: usize,
}

impl<E> Initialization<E> {
    pub fn best(&self) -> &Candidate<E> {
        &self.candidates[0]
    }
}

/// Uniform random labels in `0..k` with at least `min_size` members per group.
pub fn random_partition<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    min_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    for _ in 0..PARTITION_ATTEMPTS {
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        if counts.iter().all(|&c| c >= min_size) {
            return Ok(labels);
        }
    }
    Err(SalMoeError::DegeneratePartition {
        k,
        attempts: PARTITION_ATTEMPTS,
    })
}

/// Random partition around `k` distinct rows drawn as centres: each row joins
/// its nearest centre in standardized `t` space (intercept dropped), with `y`
/// appended as a coordinate when `with_response` is set or `t` has no
/// covariates.
pub fn centre_partition<R: Rng + ?Sized>(
    d: &Dataset,
    k: usize,
    min_size: usize,
    with_response: bool,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = d.n();
    let mut cols: Vec<Vec<f64>> = (1..=d.q())
        .map(|j| d.t().column(j).iter().copied().collect())
        .collect();
    if with_response || cols.is_empty() {
        cols.push(d.y().iter().copied().collect());
    }
    for c in &mut cols {
        let m = c.iter().sum::<f64>() / n as f64;
        let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
        let s = if sd > 0.0 { sd } else { 1.0 };
        c.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    for _ in 0..PARTITION_ATTEMPTS {
        let centres = rand::seq::index::sample(rng, n, k).into_vec();
        let labels: Vec<usize> = (0..n)
            .map(|i| {
                let dist = |c: usize| {
                    cols.iter()
                        .map(|col| (col[i] - col[c]).powi(2))
                        .sum::<f64>()
                };
                (0..k)
                    .min_by(|&a, &b| dist(centres[a]).total_cmp(&dist(centres[b])))
                    .unwrap()
            })
            .collect();
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        if counts.iter().all(|&c| c >= min_size) {
            return Ok(labels);
        }
    }
    Err(SalMoeError::DegeneratePartition {
        k,
        attempts: PARTITION_ATTEMPTS,
    })
}

/// γ-weighted sample skewness of `r`; zero when the spread vanishes.
pub fn weighted_skewness(r: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return 0.0;
    }
    let mean = r.iter().zip(w).map(|(x, g)| g * x).sum::<f64>() / sw;
    let (m2, m3) = r.iter().zip(w).fold((0.0, 0.0), |(a, b), (x, g)| {
        let c = x - mean;
        (a + g * c * c, b + g * c * c * c)
    });
    let (m2, m3) = (m2 / sw, m3 / sw);
    if m2 <= f64::EPSILON * mean.abs().max(1.0) {
        return 0.0;
    }
    m3 / m2.powf(1.5)
}

pub(crate) fn gating_design(d: &Dataset, cfg: &FitConfig) -> Result<Option<GatingDesign>> {
    if cfg.k == 1 {
        return Ok(None);
    }
    Ok(Some(
        GatingDesign::new(d.t())?.with_norm_cap(cfg.gating_norm_cap),
    ))
}

fn check_size(d: &Dataset, cfg: &FitConfig) -> Result<()> {
    let need = cfg.k * (d.p() + 2);
    if d.n() < need {
        return Err(SalMoeError::InvalidData(format!(
            "n = {} is too small for K = {} (need at least {need} rows)",
            d.n(),
            cfg.k
        )));
    }
    Ok(())
}

/// Gaussian MoE from a random hard partition (uniform labels, nearest of
/// random centres in `(t, y)`, or nearest of random centres in `t`, with
/// equal odds), gates fitted to the partition by a few MM steps, refined by a
/// short EM run.
fn gaussian_candidate(
    d: &Dataset,
    cfg: &FitConfig,
    design: Option<&GatingDesign>,
    rng: &mut SalRng,
) -> Result<RawFit<GaussianExpert>> {
    let labels = match rng.gen_range(0..3) {
        0 => random_partition(d.n(), cfg.k, d.p() + 2, rng)?,
        1 => centre_partition(d, cfg.k, d.p() + 2, true, rng)?,
        _ => centre_partition(d, cfg.k, d.p() + 2, false, rng)?,
    };
    let hard = ResponsibilityMatrix::from_labels(&labels, cfg.k)?;
    let experts = (0..cfg.k)
        .map(|c| gaussian_m_step(d, hard.matrix().column(c).as_slice(), cfg.sigma_min, c + 1))
        .collect::<Result<Vec<_>>>()?;
    let mut gating = GatingParams::zeros(d.q(), cfg.k);
    if let Some(des) = design {
        for _ in 0..GATING_INIT_STEPS {
            gating = des.mm_step(&gating, &hard)?;
        }
    }
    let start = MoeModel::new(experts, gating)?;
    run_em(d, cfg, &start, design, cfg.init_gmoe_iters)
}

/// SAL starting values from a Gaussian fit: same β and gates, σ the
/// component residual variance, α the clipped residual skewness.
fn sal_from_gaussian(d: &Dataset, g: &RawFit<GaussianExpert>) -> Result<SalMoeModel> {
    let locs = g.model.locations(d);
    let experts = g
        .model
        .experts()
        .iter()
        .enumerate()
        .map(|(c, e)| {
            let resid: Vec<f64> = (0..d.n()).map(|i| d.y()[i] - locs[c][i]).collect();
            let skew = weighted_skewness(&resid, g.gamma.matrix().column(c).as_slice());
            SalParams::new(
                skew.clamp(-ALPHA_INIT_CLIP, ALPHA_INIT_CLIP),
                e.sigma,
                e.beta.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    MoeModel::new(experts, g.model.gating().clone())
}

/// One SAL initializer drawn from `rng` (before screening).
pub fn initial_candidate(d: &Dataset, cfg: &FitConfig, rng: &mut SalRng) -> Result<SalMoeModel> {
    cfg.validate()?;
    check_size(d, cfg)?;
    let design = gating_design(d, cfg)?;
    sal_from_gaussian(d, &gaussian_candidate(d, cfg, design.as_ref(), rng)?)
}

fn screen<E, F>(d: &Dataset, cfg: &FitConfig, make: F) -> Result<Initialization<E>>
where
    E: EmExpert,
    F: Fn(&mut SalRng, Option<&GatingDesign>) -> Result<MoeModel<E>> + Sync,
{
    cfg.validate()?;
    check_size(d, cfg)?;
    let design = gating_design(d, cfg)?;
    let results: Vec<Result<Candidate<E>>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = substream(cfg.seed, restart as u64);
            let start = make(&mut rng, design.as_ref())?;
            let run = run_em(d, cfg, &start, design.as_ref(), cfg.screen_iters)?;
            Ok(Candidate {
                restart,
                screened_loglik: *run.trace.last().unwrap(),
                model: run.model,
            })
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_err()).count();
    let mut candidates: Vec<Candidate<E>> = results.into_iter().filter_map(|r| r.ok()).collect();
    if candidates.is_empty() {
        return Err(SalMoeError::AllRestartsFailed(cfg.restarts));
    }
    candidates.sort_by(|a, b| {
        b.screened_loglik
            .partial_cmp(&a.screened_loglik)
            .unwrap()
            .then(a.restart.cmp(&b.restart))
    });
    Ok(Initialization {
        candidates,
        failures,
    })
}

/// Draws `cfg.restarts` SAL initializers, screens each with a short EM-MM
/// run and ranks them by the resulting log-likelihood.
pub fn initialize(d: &Dataset, cfg: &FitConfig) -> Result<Initialization<SalParams>> {
    screen(d, cfg, |rng, design| {
        sal_from_gaussian(d, &gaussian_candidate(d, cfg, design, rng)?)
    })
}

/// Restart screening for the Gaussian comparator.
pub fn initialize_gaussian(d: &Dataset, cfg: &FitConfig) -> Result<Initialization<GaussianExpert>> {
    screen(d, cfg, |rng, design| {
        Ok(gaussian_candidate(d, cfg, design, rng)?.model)
    })
}
