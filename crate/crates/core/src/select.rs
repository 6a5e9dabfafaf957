//! Order selection with BIC, ICL and PanIC.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fit::{fit, FitConfig, FitReport};
use crate::model::{Dataset, SalMoeModel};

/// Default PanIC calibration `(β, ν)`.
pub const DEFAULT_PANIC_BETA: u32 = 1;
pub const DEFAULT_PANIC_NU: f64 = 1000.0;

/// The four calibration pairs considered for PanIC.
pub const PANIC_CALIBRATIONS: [(u32, f64); 4] = [(1, 1e3), (2, 1e3), (1, 1e4), (2, 1e4)];

/// Free parameters of a `K`-component model: `K(p+q+4) - q - 1`.
pub fn degrees_of_freedom(k: usize, p: usize, q: usize) -> usize {
    k * (p + q + 4) - q - 1
}

pub fn bic(loglik: f64, k: usize, p: usize, q: usize, n: usize) -> f64 {
    -2.0 * loglik + (n as f64).ln() * degrees_of_freedom(k, p, q) as f64
}

/// ICL from the classification log-likelihood at the MAP allocation.
pub fn icl_from_classification(cl_loglik: f64, k: usize, p: usize, q: usize, n: usize) -> f64 {
    bic(cl_loglik, k, p, q, n)
}

pub fn classification_loglik(m: &SalMoeModel, d: &Dataset) -> Result<f64> {
    m.classification_loglik(d)
}

pub fn icl(m: &SalMoeModel, d: &Dataset) -> Result<f64> {
    Ok(icl_from_classification(
        m.classification_loglik(d)?,
        m.k(),
        m.p(),
        m.q(),
        d.n(),
    ))
}

/// `log₊(x) = max(1, ln x)` applied `beta` times.
pub fn iterated_log_plus(x: f64, beta: u32) -> f64 {
    (0..beta).fold(x, |v, _| v.ln().max(1.0))
}

/// PanIC scale `α(β, ν) = ln ν / (2 √ν log₊^(β)(ν))`, which makes the PanIC
/// penalty equal to the BIC penalty at `n = ν`.
pub fn panic_alpha(beta: u32, nu: f64) -> f64 {
    nu.ln() / (2.0 * nu.sqrt() * iterated_log_plus(nu, beta))
}

/// `-2ℓ + 2α·df·√n·log₊^(β)(n)`.
pub fn panic(loglik: f64, k: usize, p: usize, q: usize, n: usize, alpha: f64, beta: u32) -> f64 {
    let n = n as f64;
    -2.0 * loglik
        + 2.0 * alpha * degrees_of_freedom(k, p, q) as f64 * n.sqrt() * iterated_log_plus(n, beta)
}

/// Settings of a K sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub k_range: Vec<usize>,
    pub panic_beta: u32,
    pub panic_nu: f64,
}

impl SweepConfig {
    pub fn new(k_range: Vec<usize>) -> Self {
        Self {
            k_range,
            panic_beta: DEFAULT_PANIC_BETA,
            panic_nu: DEFAULT_PANIC_NU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub loglik: f64,
    pub df: usize,
    pub bic: f64,
    pub icl: f64,
    pub panic: f64,
}

/// Criteria per `K` with the chosen order for each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcTable {
    pub rows: Vec<IcRow>,
    pub beta: u32,
    pub nu: f64,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    /// `K` values whose fit failed, with the error message.
    pub failures: Vec<(usize, String)>,
}

/// Chosen `K` per criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub bic: usize,
    pub icl: usize,
    pub panic: usize,
}

fn argmin_k(rows: &[IcRow], key: impl Fn(&IcRow) -> f64) -> Option<usize> {
    // Rows are sorted by K, so a strict comparison keeps the smaller K on ties.
    let mut best: Option<&IcRow> = None;
    for r in rows {
        if best.map_or(true, |b| key(r) < key(b)) {
            best = Some(r);
        }
    }
    best.map(|r| r.k)
}

impl IcTable {
    /// Builds rows from per-`K` `(loglik, classification loglik)` pairs.
    pub fn from_logliks(
        entries: &[(usize, f64, f64)],
        n: usize,
        p: usize,
        q: usize,
        beta: u32,
        nu: f64,
    ) -> Self {
        let alpha = panic_alpha(beta, nu);
        let mut rows: Vec<IcRow> = entries
            .iter()
            .map(|&(k, ll, cl)| IcRow {
                k,
                loglik: ll,
                df: degrees_of_freedom(k, p, q),
                bic: bic(ll, k, p, q, n),
                icl: icl_from_classification(cl, k, p, q, n),
                panic: panic(ll, k, p, q, n, alpha, beta),
            })
            .collect();
        rows.sort_by_key(|r| r.k);
        Self {
            rows,
            beta,
            nu,
            n,
            p,
            q,
            failures: Vec::new(),
        }
    }

    /// Argmin per criterion with ties to the smaller `K`; `None` if every fit failed.
    pub fn chosen(&self) -> Option<Choice> {
        Some(Choice {
            bic: argmin_k(&self.rows, |r| r.bic)?,
            icl: argmin_k(&self.rows, |r| r.icl)?,
            panic: argmin_k(&self.rows, |r| r.panic)?,
        })
    }

    /// The same fits scored under another PanIC calibration.
    pub fn recalibrated(&self, beta: u32, nu: f64) -> Self {
        let alpha = panic_alpha(beta, nu);
        let mut t = self.clone();
        t.beta = beta;
        t.nu = nu;
        for r in &mut t.rows {
            r.panic = panic(r.loglik, r.k, self.p, self.q, self.n, alpha, beta);
        }
        t
    }
}

/// A sweep's table together with the fit at each `K`.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub table: IcTable,
    pub fits: Vec<FitReport>,
}

/// Fits every `K` in the range and tabulates the criteria. Per-`K` seeds are
/// derived from `cfg.seed` and `K`, so results do not depend on the range.
pub fn sweep_k(d: &Dataset, cfg: &FitConfig, sweep: &SweepConfig) -> Result<Sweep> {
    if sweep.k_range.is_empty() {
        return Err(crate::SalMoeError::InvalidParameter(
            "k_range is empty".into(),
        ));
    }
    let outcomes: Vec<(usize, Result<(FitReport, f64)>)> = sweep
        .k_range
        .par_iter()
        .map(|&k| {
            let kcfg = FitConfig {
                k,
                seed: crate::rng::derive_seed(cfg.seed, k as u64),
                ..cfg.clone()
            };
            let res = fit(d, &kcfg).and_then(|r| {
                let cl = r.model.classification_loglik(d)?;
                Ok((r, cl))
            });
            (k, res)
        })
        .collect();
    let mut entries = Vec::new();
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for (k, res) in outcomes {
        match res {
            Ok((r, cl)) => {
                entries.push((k, r.loglik(), cl));
                fits.push(r);
            }
            Err(e) => failures.push((k, e.to_string())),
        }
    }
    let mut table = IcTable::from_logliks(
        &entries,
        d.n(),
        d.p(),
        d.q(),
        sweep.panic_beta,
        sweep.panic_nu,
    );
    table.failures = failures;
    fits.sort_by_key(|f| f.model.k());
    Ok(Sweep { table, fits })
}
