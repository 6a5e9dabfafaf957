//! Nonparametric case-resampling bootstrap for SALMoE parameters.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::label_alignment;
use crate::error::{Result, SalMoeError};
use crate::fit::{em_mm_fit, FitConfig};
use crate::model::{Dataset, SalMoeModel};
use crate::rng::{derive_seed, substream};

/// Smallest accepted number of replicates.
pub const MIN_REPLICATES: usize = 50;

/// Iteration cap of each replicate refit.
pub const REPLICATE_MAX_ITER: usize = 200;

/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

const BOOTSTRAP_STREAM: u64 = 0xB007;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub name: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapTable {
    pub rows: Vec<CiRow>,
    pub level: f64,
    pub replicates: usize,
    pub failures: usize,
}

/// 1-based ranks `(lower, upper)` of the percentile interval among `b` sorted values.
pub fn percentile_ranks(b: usize, level: f64) -> (usize, usize) {
    let tail = (1.0 - level) / 2.0 * b as f64;
    let lower = ((tail - 1e-9).ceil() as usize).clamp(1, b);
    (lower, b + 1 - lower)
}

/// Resamples rows with replacement `b` times, refits from `original`
/// (at most 200 iterations), aligns labels to the original's MAP
/// allocation, and reports percentile intervals at `level`.
pub fn bootstrap_ci(
    d: &Dataset,
    original: &SalMoeModel,
    cfg: &FitConfig,
    b: usize,
    level: f64,
) -> Result<BootstrapTable> {
    if b < MIN_REPLICATES {
        return Err(SalMoeError::InvalidParameter(format!(
            "B must be at least {MIN_REPLICATES}, got {b}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(SalMoeError::InvalidParameter(format!(
            "level must be in (0, 1), got {level}"
        )));
    }
    let rcfg = FitConfig {
        k: original.k(),
        max_iter: REPLICATE_MAX_ITER,
        ..cfg.clone()
    };
    let base = derive_seed(cfg.seed, BOOTSTRAP_STREAM);
    let k = original.k();
    let draws: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(base, r as u64);
            let idx: Vec<usize> = (0..d.n()).map(|_| rng.gen_range(0..d.n())).collect();
            let dd = d.subset(&idx);
            let fit = em_mm_fit(&dd, &rcfg, original).ok()?;
            let reference = original.map_cluster(&dd).ok()?;
            let labels = fit.model.map_cluster(&dd).ok()?;
            let perm = label_alignment(&reference, &labels, k);
            let aligned = fit.model.permuted(&perm).ok()?;
            Some(
                aligned
                    .named_parameters()
                    .into_iter()
                    .map(|(_, v)| v)
                    .collect(),
            )
        })
        .collect();
    let failures = draws.iter().filter(|d| d.is_none()).count();
    if failures as f64 > MAX_FAILURE_FRACTION * b as f64 {
        return Err(SalMoeError::TooManyFailures {
            failed: failures,
            total: b,
        });
    }
    let good: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let (lo, hi) = percentile_ranks(good.len(), level);
    let rows = original
        .named_parameters()
        .into_iter()
        .enumerate()
        .map(|(j, (name, estimate))| {
            let mut v: Vec<f64> = good.iter().map(|g| g[j]).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            CiRow {
                name,
                estimate,
                lower: v[lo - 1],
                upper: v[hi - 1],
            }
        })
        .collect();
    Ok(BootstrapTable {
        rows,
        level,
        replicates: good.len(),
        failures,
    })
}
