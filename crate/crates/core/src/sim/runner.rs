//! Named simulation experiments and their artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::metrics::{clustering_metrics, mean, median, parameter_metrics, rmse_against};
use super::scenario::{
    generate, scenario2_spec, table1_spec, three_component_spec, ExpertFamily, ScenarioSpec,
};
use crate::error::{Result, SalMoeError};
use crate::fit::{fit, gmoe_fit, FitConfig};
use crate::model::Dataset;
use crate::rng::{derive_seed, substream};
use crate::select::{sweep_k, SweepConfig, PANIC_CALIBRATIONS};

/// Registered experiment names.
pub const SCENARIOS: [&str; 14] = [
    "estimation-1",
    "estimation-2",
    "robust-1",
    "robust-2",
    "cluster-a",
    "cluster-b",
    "cluster-c",
    "cluster-d",
    "order-S1",
    "order-S2",
    "order-S3",
    "order-S4",
    "order-S5",
    "order-S6",
];

pub const DEFAULT_SAMPLE_SIZES: [usize; 4] = [100, 500, 1000, 2000];
pub const DEFAULT_CONTAMINATION: [f64; 5] = [0.01, 0.02, 0.03, 0.04, 0.05];
pub const DEFAULT_LAMBDAS: [f64; 5] = [-20.0, -10.0, 0.0, 10.0, 20.0];
pub const DEFAULT_ORDER_K_RANGE: [usize; 4] = [2, 3, 4, 5];
pub const DEFAULT_N: usize = 500;
pub const CLUSTER_NOISE: f64 = 0.05;

/// Replication count, seed and optional overrides of the presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub reps: usize,
    pub seed: u64,
    pub n: Option<usize>,
    pub sample_sizes: Option<Vec<usize>>,
    pub contamination: Option<Vec<f64>>,
    pub sources: Option<Vec<ExpertFamily>>,
    pub lambdas: Option<Vec<f64>>,
    pub k_range: Option<Vec<usize>>,
    pub restarts: Option<usize>,
}

impl RunOptions {
    pub fn new(reps: usize, seed: u64) -> Self {
        Self {
            reps,
            seed,
            n: None,
            sample_sizes: None,
            contamination: None,
            sources: None,
            lambdas: None,
            k_range: None,
            restarts: None,
        }
    }

    fn fit_config(&self, k: usize, seed: u64) -> FitConfig {
        let mut cfg = FitConfig::new(k).with_seed(seed);
        if let Some(r) = self.restarts {
            cfg.restarts = r;
        }
        cfg
    }

    fn n_or_default(&self) -> usize {
        self.n.unwrap_or(DEFAULT_N)
    }
}

/// One metric of one replication under one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub setting: String,
    pub rep: usize,
    pub metric: String,
    pub value: f64,
}

/// Everything a scenario run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub name: String,
    pub spec: Value,
    pub records: Vec<Record>,
    pub summary: Value,
}

impl ScenarioOutput {
    /// Values of `metric` under `setting`, in replication order.
    pub fn values(&self, setting: &str, metric: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.setting == setting && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    /// Writes `replications.csv`, `summary.json` and `spec.json` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut csv = fs::File::create(dir.join("replications.csv"))?;
        writeln!(csv, "setting,rep,metric,value")?;
        for r in &self.records {
            writeln!(
                csv,
                "{},{},{},{}",
                csv_field(&r.setting),
                r.rep,
                csv_field(&r.metric),
                format_f64(r.value)
            )?;
        }
        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&self.summary)? + "\n",
        )?;
        fs::write(
            dir.join("spec.json"),
            serde_json::to_string_pretty(&self.spec)? + "\n",
        )?;
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Fixed 17-significant-digit rendering used in CSV outputs.
pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

struct Setting {
    label: String,
    spec: ScenarioSpec,
}

fn rep_data(spec: &ScenarioSpec, seed: u64, setting: usize, rep: usize) -> Result<(Dataset, u64)> {
    let base = derive_seed(seed, setting as u64);
    let mut rng = substream(base, rep as u64);
    let d = generate(spec, &mut rng)?;
    Ok((d, derive_seed(derive_seed(base, rep as u64), 1)))
}

fn run_reps<F>(settings: &[Setting], opts: &RunOptions, body: F) -> Vec<Record>
where
    F: Fn(&Setting, &Dataset, u64) -> Result<Vec<(String, f64)>> + Sync,
{
    let jobs: Vec<(usize, usize)> = (0..settings.len())
        .flat_map(|s| (0..opts.reps).map(move |r| (s, r)))
        .collect();
    jobs.par_iter()
        .map(|&(s, rep)| {
            let setting = &settings[s];
            let out = rep_data(&setting.spec, opts.seed, s, rep)
                .and_then(|(d, fseed)| body(setting, &d, fseed));
            let metrics = out.unwrap_or_else(|_| vec![("failed".to_string(), 1.0)]);
            metrics
                .into_iter()
                .map(|(metric, value)| Record {
                    setting: setting.label.clone(),
                    rep,
                    metric,
                    value,
                })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect()
}

fn failures(records: &[Record], setting: &str) -> usize {
    records
        .iter()
        .filter(|r| r.setting == setting && r.metric == "failed")
        .count()
}

fn spec_echo(name: &str, opts: &RunOptions, settings: &[Setting]) -> Value {
    let specs: BTreeMap<&str, &ScenarioSpec> = settings
        .iter()
        .map(|s| (s.label.as_str(), &s.spec))
        .collect();
    json!({ "scenario": name, "options": opts, "settings": specs })
}

fn values<'a>(
    records: &'a [Record],
    setting: &'a str,
    metric: &'a str,
) -> impl Iterator<Item = f64> + 'a {
    records
        .iter()
        .filter(move |r| r.setting == setting && r.metric == metric)
        .map(|r| r.value)
}

fn estimation(name: &str, base: ScenarioSpec, opts: &RunOptions) -> Result<ScenarioOutput> {
    let sizes = opts
        .sample_sizes
        .clone()
        .unwrap_or_else(|| DEFAULT_SAMPLE_SIZES.to_vec());
    let settings: Vec<Setting> = sizes
        .iter()
        .map(|&n| Setting {
            label: format!("n={n}"),
            spec: base.clone().with_n(n),
        })
        .collect();
    let records = run_reps(&settings, opts, |s, d, fseed| {
        let truth = s.spec.truth_sal()?;
        let rep = fit(d, &opts.fit_config(s.spec.k, fseed))?;
        let mut out = vec![("loglik".to_string(), rep.loglik())];
        for e in parameter_metrics(&rep.model, &truth)? {
            out.push((format!("bias:{}", e.name), e.bias));
            out.push((format!("sqerr:{}", e.name), e.mse));
        }
        Ok(out)
    });
    let names: Vec<String> = settings[0]
        .spec
        .truth_sal()?
        .named_parameters()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let mut summary = serde_json::Map::new();
    for s in &settings {
        let mut mse = serde_json::Map::new();
        let mut bias = serde_json::Map::new();
        for p in &names {
            mse.insert(
                p.clone(),
                json!(mean(
                    &values(&records, &s.label, &format!("sqerr:{p}")).collect::<Vec<_>>()
                )),
            );
            bias.insert(
                p.clone(),
                json!(mean(
                    &values(&records, &s.label, &format!("bias:{p}")).collect::<Vec<_>>()
                )),
            );
        }
        summary.insert(
            s.label.clone(),
            json!({ "mse": mse, "bias": bias, "failures": failures(&records, &s.label) }),
        );
    }
    Ok(ScenarioOutput {
        name: name.into(),
        spec: spec_echo(name, opts, &settings),
        summary: Value::Object(summary),
        records,
    })
}

/// Paired SALMoE / GMoE fits scored by the RMSE of the mean function.
fn rmse_pair(
    s: &Setting,
    d: &Dataset,
    fseed: u64,
    opts: &RunOptions,
) -> Result<Vec<(String, f64)>> {
    let truth_means = s.spec.truth()?.predict_means(d)?;
    let cfg = opts.fit_config(s.spec.k, fseed);
    let sal = fit(d, &cfg)?;
    let gauss = gmoe_fit(d, &cfg)?;
    Ok(vec![
        (
            "salmoe_rmse".into(),
            rmse_against(&sal.model, &truth_means, d)?,
        ),
        (
            "gmoe_rmse".into(),
            rmse_against(&gauss.model, &truth_means, d)?,
        ),
    ])
}

fn rmse_summary(records: &[Record], settings: &[Setting]) -> Value {
    let mut summary = serde_json::Map::new();
    for s in settings {
        let sal: Vec<f64> = values(records, &s.label, "salmoe_rmse").collect();
        let gm: Vec<f64> = values(records, &s.label, "gmoe_rmse").collect();
        summary.insert(
            s.label.clone(),
            json!({
                "salmoe_rmse_median": median(&sal),
                "gmoe_rmse_median": median(&gm),
                "salmoe_rmse_mean": mean(&sal),
                "gmoe_rmse_mean": mean(&gm),
                "failures": failures(records, &s.label),
            }),
        );
    }
    Value::Object(summary)
}

fn family_name(f: ExpertFamily) -> &'static str {
    match f {
        ExpertFamily::Sal => "sal",
        ExpertFamily::Gaussian => "gaussian",
        ExpertFamily::SkewNormal => "skew_normal",
    }
}

/// Setting label used by the contamination study.
pub fn robust1_label(source: ExpertFamily, c: f64) -> String {
    format!("source={},c={c}", family_name(source))
}

/// Setting label used by the skewness study.
pub fn robust2_label(lambda: f64) -> String {
    format!("lambda={lambda}")
}

fn robust1(opts: &RunOptions) -> Result<ScenarioOutput> {
    let sources = opts
        .sources
        .clone()
        .unwrap_or_else(|| vec![ExpertFamily::Sal, ExpertFamily::Gaussian]);
    let cs = opts
        .contamination
        .clone()
        .unwrap_or_else(|| DEFAULT_CONTAMINATION.to_vec());
    let mut settings = Vec::new();
    for &src in &sources {
        if src == ExpertFamily::SkewNormal {
            return Err(SalMoeError::InvalidSpec(
                "robust-1 sources are sal or gaussian".into(),
            ));
        }
        for &c in &cs {
            let spec = table1_spec(src, None)
                .with_n(opts.n_or_default())
                .with_contamination(c);
            settings.push(Setting {
                label: robust1_label(src, c),
                spec,
            });
        }
    }
    let records = run_reps(&settings, opts, |s, d, fseed| rmse_pair(s, d, fseed, opts));
    let summary = rmse_summary(&records, &settings);
    Ok(ScenarioOutput {
        name: "robust-1".into(),
        spec: spec_echo("robust-1", opts, &settings),
        summary,
        records,
    })
}

fn robust2(opts: &RunOptions) -> Result<ScenarioOutput> {
    let lambdas = opts
        .lambdas
        .clone()
        .unwrap_or_else(|| DEFAULT_LAMBDAS.to_vec());
    let settings: Vec<Setting> = lambdas
        .iter()
        .map(|&l| Setting {
            label: robust2_label(l),
            spec: table1_spec(ExpertFamily::SkewNormal, Some(l)).with_n(opts.n_or_default()),
        })
        .collect();
    let records = run_reps(&settings, opts, |s, d, fseed| rmse_pair(s, d, fseed, opts));
    let summary = rmse_summary(&records, &settings);
    Ok(ScenarioOutput {
        name: "robust-2".into(),
        spec: spec_echo("robust-2", opts, &settings),
        summary,
        records,
    })
}

/// Labels and MAP allocations restricted to uncontaminated rows.
fn clean_labels(d: &Dataset, z_hat: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let z = d.labels().expect("generated data carry labels");
    let mask = d.noise_mask().expect("generated data carry a noise mask");
    (0..d.n())
        .filter(|&i| !mask[i])
        .map(|i| (z[i], z_hat[i]))
        .unzip()
}

fn cluster(name: &str, opts: &RunOptions) -> Result<ScenarioOutput> {
    let (family, noise) = match name {
        "cluster-a" => (ExpertFamily::Gaussian, 0.0),
        "cluster-b" => (ExpertFamily::Gaussian, CLUSTER_NOISE),
        "cluster-c" => (ExpertFamily::SkewNormal, 0.0),
        _ => (ExpertFamily::SkewNormal, CLUSTER_NOISE),
    };
    let spec = table1_spec(family, None)
        .with_n(opts.n_or_default())
        .with_contamination(noise);
    let settings = vec![Setting {
        label: name.to_string(),
        spec,
    }];
    let records = run_reps(&settings, opts, |s, d, fseed| {
        let cfg = opts.fit_config(s.spec.k, fseed);
        let sal = fit(d, &cfg)?;
        let gauss = gmoe_fit(d, &cfg)?;
        let (zt, zs) = clean_labels(d, &sal.model.map_cluster(d)?);
        let (_, zg) = clean_labels(d, &gauss.model.map_cluster(d)?);
        let ms = clustering_metrics(&zt, &zs)?;
        let mg = clustering_metrics(&zt, &zg)?;
        Ok(vec![
            ("salmoe_ari".into(), ms.ari),
            ("gmoe_ari".into(), mg.ari),
            ("salmoe_class_err".into(), ms.class_err),
            ("gmoe_class_err".into(), mg.class_err),
        ])
    });
    let mut summary = serde_json::Map::new();
    for m in [
        "salmoe_ari",
        "gmoe_ari",
        "salmoe_class_err",
        "gmoe_class_err",
    ] {
        let v: Vec<f64> = values(&records, name, m).collect();
        summary.insert(format!("{m}_median"), json!(median(&v)));
        summary.insert(format!("{m}_mean"), json!(mean(&v)));
    }
    summary.insert("failures".into(), json!(failures(&records, name)));
    Ok(ScenarioOutput {
        name: name.into(),
        spec: spec_echo(name, opts, &settings),
        summary: Value::Object(summary),
        records,
    })
}

/// Metric name of the PanIC choice under calibration `(β, ν)`.
pub fn panic_metric(beta: u32, nu: f64) -> String {
    format!("panic({beta},{nu})")
}

fn order(name: &str, opts: &RunOptions) -> Result<ScenarioOutput> {
    let spec = match name {
        "order-S1" => table1_spec(ExpertFamily::Gaussian, None),
        "order-S2" => table1_spec(ExpertFamily::Sal, None),
        "order-S3" => table1_spec(ExpertFamily::SkewNormal, Some(20.0)),
        "order-S4" => three_component_spec(ExpertFamily::Gaussian),
        "order-S5" => three_component_spec(ExpertFamily::Sal),
        _ => three_component_spec(ExpertFamily::SkewNormal),
    }
    .with_n(opts.n_or_default());
    let k_true = spec.k;
    let label = name.trim_start_matches("order-").to_string();
    let settings = vec![Setting {
        label: label.clone(),
        spec,
    }];
    let k_range = opts
        .k_range
        .clone()
        .unwrap_or_else(|| DEFAULT_ORDER_K_RANGE.to_vec());
    let records = run_reps(&settings, opts, |_, d, fseed| {
        let sweep = sweep_k(
            d,
            &opts.fit_config(1, fseed),
            &SweepConfig::new(k_range.clone()),
        )?;
        let mut out = Vec::new();
        let base = sweep
            .table
            .chosen()
            .ok_or(SalMoeError::AllRestartsFailed(0))?;
        out.push(("bic".to_string(), base.bic as f64));
        out.push(("icl".to_string(), base.icl as f64));
        for &(beta, nu) in &PANIC_CALIBRATIONS {
            let c = sweep.table.recalibrated(beta, nu).chosen().unwrap();
            out.push((panic_metric(beta, nu), c.panic as f64));
        }
        out.push(("failed_k".to_string(), sweep.table.failures.len() as f64));
        Ok(out)
    });
    let mut metrics = vec!["bic".to_string(), "icl".to_string()];
    metrics.extend(PANIC_CALIBRATIONS.iter().map(|&(b, n)| panic_metric(b, n)));
    let mut hits = serde_json::Map::new();
    let mut mean_k = serde_json::Map::new();
    for m in &metrics {
        let v: Vec<f64> = values(&records, &label, m).collect();
        hits.insert(
            m.clone(),
            json!(v.iter().filter(|&&k| k == k_true as f64).count()),
        );
        mean_k.insert(m.clone(), json!(mean(&v)));
    }
    let summary = json!({
        "K_true": k_true,
        "k_range": k_range,
        "correct": hits,
        "mean_K": mean_k,
        "failures": failures(&records, &label),
    });
    Ok(ScenarioOutput {
        name: name.into(),
        spec: spec_echo(name, opts, &settings),
        summary,
        records,
    })
}

/// Runs a registered experiment.
pub fn run_scenario(name: &str, opts: &RunOptions) -> Result<ScenarioOutput> {
    if opts.reps == 0 {
        return Err(SalMoeError::InvalidParameter(
            "reps must be at least 1".into(),
        ));
    }
    match name {
        "estimation-1" => estimation(name, table1_spec(ExpertFamily::Sal, None), opts),
        "estimation-2" => estimation(name, scenario2_spec(), opts),
        "robust-1" => robust1(opts),
        "robust-2" => robust2(opts),
        n if n.starts_with("cluster-") && SCENARIOS.contains(&n) => cluster(n, opts),
        n if n.starts_with("order-") && SCENARIOS.contains(&n) => order(n, opts),
        _ => Err(SalMoeError::UnknownScenario {
            name: name.to_string(),
            available: SCENARIOS.join(", "),
        }),
    }
}
