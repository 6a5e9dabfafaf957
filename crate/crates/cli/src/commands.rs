//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use salmoe::sim::{bootstrap_ci, clustering_metrics, run_scenario, RunOptions};
use salmoe::{format_f64, sweep_k, FitConfig, SalMoeModel, SweepConfig};

use crate::data::{DataSpec, Table};
use crate::{
    parse_k_range, BootstrapArgs, ClusterArgs, DataArgs, FitArgs, ModelArgs, Outcome, PredictArgs,
    SelectArgs, SimulateArgs,
};

/// Contents of report.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub loglik: f64,
    pub bic: f64,
    pub icl: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    pub restarts: usize,
    pub best_restart: usize,
    pub failed_restarts: usize,
    pub epsilon: f64,
    pub max_iter: usize,
    pub data: DataSpec,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_csv(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn gamma_header(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("gamma_{j}")).collect()
}

fn data_spec(a: &DataArgs, table: &Table) -> Result<DataSpec> {
    let spec = DataSpec::new(a.y.clone(), a.x.clone(), a.t.clone());
    if a.standardize {
        spec.standardized(table)
    } else {
        Ok(spec)
    }
}

pub fn load_model(path: &Path) -> Result<SalMoeModel> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot open model file {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("{} is not a valid model file", path.display()))
}

/// The report named by `--report`, else report.json beside the model if present.
fn load_report(m: &ModelArgs) -> Result<Option<FitRecord>> {
    let path: PathBuf = match &m.report {
        Some(p) => p.clone(),
        None => {
            let p = m.model.with_file_name("report.json");
            if !p.exists() {
                return Ok(None);
            }
            p
        }
    };
    let text = fs::read_to_string(&path)
        .with_context(|| format!("cannot open report file {}", path.display()))?;
    Ok(Some(serde_json::from_str(&text).with_context(|| {
        format!("{} is not a valid report file", path.display())
    })?))
}

/// Column roles from the report, overridden by any flags given.
fn resolve_spec(
    report: Option<&FitRecord>,
    y: Option<&String>,
    x: Option<&Vec<String>>,
    t: Option<&Vec<String>>,
) -> Result<DataSpec> {
    let base = report.map(|r| r.data.clone());
    let x = match (x, &base) {
        (Some(x), _) => x.clone(),
        (None, Some(b)) => b.x.clone(),
        (None, None) => {
            bail!("no report.json found next to the model; pass --x (and --t if it differs)")
        }
    };
    let t = match (t, &base) {
        (Some(t), _) => t.clone(),
        (None, Some(b)) if b.x == x => b.t.clone(),
        _ => x.clone(),
    };
    let y = y
        .cloned()
        .or_else(|| base.as_ref().map(|b| b.y.clone()))
        .unwrap_or_default();
    Ok(DataSpec {
        y,
        x,
        t,
        standardization: base.and_then(|b| b.standardization),
    })
}

fn check_dims(m: &SalMoeModel, spec: &DataSpec) -> Result<()> {
    if spec.x.len() != m.p() || spec.t.len() != m.q() {
        bail!(
            "dimension mismatch: model expects {} expert and {} gating covariates, got {} and {}",
            m.p(),
            m.q(),
            spec.x.len(),
            spec.t.len()
        );
    }
    Ok(())
}

pub fn fit(a: &FitArgs) -> Result<Outcome> {
    let table = Table::read(&a.data.input)?;
    let spec = data_spec(&a.data, &table)?;
    let d = spec.dataset(&table)?;
    let cfg = a.control.config(a.k);
    let r = salmoe::fit(&d, &cfg)?;
    create_dir(&a.out)?;
    let m = &r.model;
    write_json(&a.out.join("model.json"), m)?;
    let record = FitRecord {
        k: m.k(),
        n: d.n(),
        p: m.p(),
        q: m.q(),
        loglik: r.loglik(),
        bic: salmoe::bic(r.loglik(), m.k(), m.p(), m.q(), d.n()),
        icl: salmoe::icl(m, &d)?,
        iterations: r.iterations,
        converged: r.converged,
        seed: cfg.seed,
        restarts: cfg.restarts,
        best_restart: r.best_restart,
        failed_restarts: r.failed_restarts,
        epsilon: cfg.epsilon,
        max_iter: cfg.max_iter,
        data: spec,
    };
    write_json(&a.out.join("report.json"), &record)?;
    let g = r.responsibilities.matrix();
    write_csv(
        &a.out.join("responsibilities.csv"),
        &gamma_header(m.k()),
        (0..d.n()).map(|i| g.row(i).iter().map(|v| format_f64(*v)).collect()),
    )?;
    write_csv(
        &a.out.join("trace.csv"),
        &["iteration".to_string(), "loglik".to_string()],
        r.loglik_trace
            .iter()
            .enumerate()
            .map(|(j, v)| vec![j.to_string(), format_f64(*v)]),
    )?;
    if r.converged {
        Ok(Outcome::Success)
    } else {
        eprintln!("warning: no convergence after {} iterations", r.iterations);
        Ok(Outcome::NotConverged)
    }
}

pub fn predict(a: &PredictArgs) -> Result<Outcome> {
    let m = load_model(&a.model.model)?;
    let report = load_report(&a.model)?;
    let spec = resolve_spec(report.as_ref(), None, a.x.as_ref(), a.t.as_ref())?;
    check_dims(&m, &spec)?;
    let table = Table::read(&a.input)?;
    let (xr, tr) = spec.design_rows(&table)?;
    let scale = spec.standardization.as_ref().map(|s| s.y);
    let mut rows = Vec::with_capacity(table.n());
    for (x, t) in xr.iter().zip(&tr) {
        let with_one = |v: &[f64]| {
            std::iter::once(1.0)
                .chain(v.iter().copied())
                .collect::<Vec<f64>>()
        };
        let p = m.predict(&with_one(x), &with_one(t))?;
        let (mean, variance, lower, upper) = match scale {
            Some(s) => (
                s.invert(p.mean),
                s.sd * s.sd * p.variance,
                s.invert(p.lower),
                s.invert(p.upper),
            ),
            None => (p.mean, p.variance, p.lower, p.upper),
        };
        rows.push(
            [mean, variance, lower, upper]
                .iter()
                .map(|v| format_f64(*v))
                .collect(),
        );
    }
    create_dir(&a.out)?;
    let header: Vec<String> = ["mean", "variance", "lower", "upper"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_csv(&a.out.join("predictions.csv"), &header, rows)?;
    Ok(Outcome::Success)
}

#[derive(Debug, Serialize)]
struct ClusterScores {
    reference: String,
    ari: f64,
    class_err: f64,
    accuracy: f64,
}

pub fn cluster(a: &ClusterArgs) -> Result<Outcome> {
    let m = load_model(&a.model.model)?;
    let report = load_report(&a.model)?;
    let spec = resolve_spec(report.as_ref(), a.y.as_ref(), a.x.as_ref(), a.t.as_ref())?;
    if spec.y.is_empty() {
        bail!("no response column known; pass --y");
    }
    check_dims(&m, &spec)?;
    let table = Table::read(&a.input)?;
    let d = spec.dataset(&table)?;
    let gamma = m.responsibilities(&d)?;
    let labels = m.map_cluster(&d)?;
    create_dir(&a.out)?;
    let mut header = vec!["label".to_string()];
    header.extend(gamma_header(m.k()));
    let g = gamma.matrix();
    write_csv(
        &a.out.join("labels.csv"),
        &header,
        (0..d.n()).map(|i| {
            let mut row = vec![labels[i].to_string()];
            row.extend(g.row(i).iter().map(|v| format_f64(*v)));
            row
        }),
    )?;
    if let Some(col) = &a.reference {
        let reference = table.labels(col)?;
        let c = clustering_metrics(&reference, &labels)?;
        let scores = ClusterScores {
            reference: col.clone(),
            ari: c.ari,
            class_err: c.class_err,
            accuracy: c.accuracy,
        };
        write_json(&a.out.join("metrics.json"), &scores)?;
    }
    Ok(Outcome::Success)
}

#[derive(Debug, Serialize)]
struct Chosen {
    bic: usize,
    icl: usize,
    panic: usize,
}

#[derive(Debug, Serialize)]
struct Failure {
    #[serde(rename = "K")]
    k: usize,
    error: String,
}

#[derive(Debug, Serialize)]
struct SelectSummary {
    chosen: Option<Chosen>,
    k_range: Vec<usize>,
    panic_beta: u32,
    panic_nu: f64,
    panic_alpha: f64,
    n: usize,
    p: usize,
    q: usize,
    seed: u64,
    restarts: usize,
    failures: Vec<Failure>,
    data: DataSpec,
}

pub fn select(a: &SelectArgs) -> Result<Outcome> {
    let ks = match (&a.k_range, a.k) {
        (Some(r), _) => parse_k_range(r)?,
        (None, Some(k)) if k >= 1 => vec![k],
        _ => bail!("pass --k-range (e.g. 1..4) or --k"),
    };
    if !(a.panic_nu > 1.0) || a.panic_beta == 0 {
        bail!("PanIC calibration needs --panic-beta >= 1 and --panic-nu > 1");
    }
    let table = Table::read(&a.data.input)?;
    let spec = data_spec(&a.data, &table)?;
    let d = spec.dataset(&table)?;
    let cfg: FitConfig = a.control.config(ks[0]);
    let sweep = SweepConfig {
        panic_beta: a.panic_beta,
        panic_nu: a.panic_nu,
        ..SweepConfig::new(ks.clone())
    };
    let s = sweep_k(&d, &cfg, &sweep)?;
    create_dir(&a.out)?;
    let header: Vec<String> = ["K", "loglik", "df", "bic", "icl", "panic"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_csv(
        &a.out.join("ic_table.csv"),
        &header,
        s.table.rows.iter().map(|r| {
            vec![
                r.k.to_string(),
                format_f64(r.loglik),
                r.df.to_string(),
                format_f64(r.bic),
                format_f64(r.icl),
                format_f64(r.panic),
            ]
        }),
    )?;
    let chosen = s.table.chosen();
    let summary = SelectSummary {
        chosen: chosen.as_ref().map(|c| Chosen {
            bic: c.bic,
            icl: c.icl,
            panic: c.panic,
        }),
        k_range: ks,
        panic_beta: a.panic_beta,
        panic_nu: a.panic_nu,
        panic_alpha: salmoe::panic_alpha(a.panic_beta, a.panic_nu),
        n: d.n(),
        p: d.p(),
        q: d.q(),
        seed: cfg.seed,
        restarts: cfg.restarts,
        failures: s
            .table
            .failures
            .iter()
            .map(|(k, e)| Failure {
                k: *k,
                error: e.clone(),
            })
            .collect(),
        data: spec,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    for f in &summary.failures {
        eprintln!("warning: fit with K = {} failed: {}", f.k, f.error);
    }
    if chosen.is_none() {
        bail!("every fit in the K range failed");
    }
    Ok(Outcome::Success)
}

pub fn simulate(a: &SimulateArgs) -> Result<Outcome> {
    if a.reps == 0 {
        bail!("--reps must be at least 1");
    }
    let opts = RunOptions {
        n: a.n,
        sample_sizes: a.sample_sizes.clone(),
        restarts: a.restarts,
        ..RunOptions::new(a.reps, a.seed)
    };
    let out = run_scenario(&a.scenario, &opts)?;
    create_dir(&a.out)?;
    out.write(&a.out)
        .with_context(|| format!("cannot write scenario artifacts to {}", a.out.display()))?;
    Ok(Outcome::Success)
}

pub fn bootstrap(a: &BootstrapArgs) -> Result<Outcome> {
    let m = load_model(&a.model.model)?;
    let report = load_report(&a.model)?
        .ok_or_else(|| anyhow!("bootstrap needs the fit's report.json (pass --report)"))?;
    check_dims(&m, &report.data)?;
    let table = Table::read(&a.input)?;
    let d = report.data.dataset(&table)?;
    let cfg = FitConfig {
        epsilon: report.epsilon,
        ..FitConfig::new(m.k())
            .with_seed(a.seed)
            .with_restarts(report.restarts)
    };
    let t = bootstrap_ci(&d, &m, &cfg, a.b, a.level)?;
    create_dir(&a.out)?;
    let header: Vec<String> = ["parameter", "estimate", "lower", "upper"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_csv(
        &a.out.join("ci_table.csv"),
        &header,
        t.rows.iter().map(|r| {
            vec![
                r.name.clone(),
                format_f64(r.estimate),
                format_f64(r.lower),
                format_f64(r.upper),
            ]
        }),
    )?;
    if t.failures > 0 {
        eprintln!(
            "warning: {} of {} replicates failed and were dropped",
            t.failures, a.b
        );
    }
    Ok(Outcome::Success)
}
