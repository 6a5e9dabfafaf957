use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use salmoe::rng::substream;
use salmoe::sim::{generate, table1_spec, ExpertFamily};
use salmoe::{Dataset, SalMoeModel};
use tempfile::TempDir;

fn salmoe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salmoe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_dataset(path: &Path, d: &Dataset) {
    let mut text = String::from("y,x,z\n");
    let labels = d
        .labels()
        .map(<[usize]>::to_vec)
        .unwrap_or_else(|| vec![1; d.n()]);
    for i in 0..d.n() {
        text += &format!("{:.17e},{:.17e},{}\n", d.y()[i], d.x()[(i, 1)], labels[i]);
    }
    fs::write(path, text).unwrap();
}

fn table1_csv(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let spec = table1_spec(ExpertFamily::Sal, None).with_n(n);
    let d = generate(&spec, &mut substream(seed, 0)).unwrap();
    let path = dir.join(format!("table1_{n}_{seed}.csv"));
    write_dataset(&path, &d);
    path
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn fit_into(input: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--y",
        "y",
        "--x",
        "x",
        "--k",
        "2",
    ];
    args.extend_from_slice(&[
        "--seed",
        "3",
        "--restarts",
        "8",
        "--out",
        out.to_str().unwrap(),
    ]);
    args.extend_from_slice(extra);
    salmoe(&args)
}

#[test]
fn fit_writes_artifacts_that_round_trip() {
    let dir = TempDir::new().unwrap();
    let input = table1_csv(dir.path(), 500, 1);
    let out = dir.path().join("fit");
    let o = fit_into(&input, &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, trace) = read_csv(&out.join("trace.csv"));
    assert_eq!(h, ["iteration", "loglik"]);
    assert!(trace.windows(2).all(|w| w[1][1] >= w[0][1]));
    let (h, gamma) = read_csv(&out.join("responsibilities.csv"));
    assert_eq!(h, ["gamma_1", "gamma_2"]);
    assert_eq!(gamma.len(), 500);
    assert!(gamma
        .iter()
        .all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-12));

    let model: SalMoeModel =
        serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let spec = table1_spec(ExpertFamily::Sal, None).with_n(500);
    let d = generate(&spec, &mut substream(1, 0)).unwrap();
    let ll = model.log_likelihood(&d).unwrap();
    let last = trace.last().unwrap()[1];
    assert!(
        (ll - last).abs() <= 1e-9 * ll.abs().max(1.0),
        "{ll} vs {last}"
    );
    assert_eq!(report["converged"], true);
    assert_eq!(report["K"], 2);
    assert!(report["data"]["standardization"].is_null());

    let again = dir.path().join("again");
    assert_eq!(code(&fit_into(&input, &again, &[])), 0);
    for f in [
        "model.json",
        "report.json",
        "trace.csv",
        "responsibilities.csv",
    ] {
        assert_eq!(
            fs::read(out.join(f)).unwrap(),
            fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn usage_and_data_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let input = table1_csv(dir.path(), 50, 2);
    let out = dir.path().join("o");
    let o = salmoe(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--y",
        "co2",
        "--x",
        "x",
        "--k",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("column 'co2' not found"),
        "{}",
        stderr(&o)
    );

    let o = salmoe(&[
        "fit",
        "--input",
        "/nonexistent/data.csv",
        "--y",
        "y",
        "--x",
        "x",
        "--k",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("cannot open input file"));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "y,x\n1.0,0.5\n2.0,abc\n").unwrap();
    let o = salmoe(&[
        "fit",
        "--input",
        bad.to_str().unwrap(),
        "--y",
        "y",
        "--x",
        "x",
        "--k",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3, column 'x'"), "{}", stderr(&o));

    assert_eq!(code(&salmoe(&["fit", "--bogus"])), 1);
    assert_eq!(code(&salmoe(&["--help"])), 0);
}

#[test]
fn non_convergence_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let input = table1_csv(dir.path(), 300, 3);
    let out = dir.path().join("fit");
    let o = fit_into(&input, &out, &["--max-iter", "2"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(out.join("model.json").exists());
}

#[test]
fn predictions_cover_training_data_and_back_transform() {
    let dir = TempDir::new().unwrap();
    let input = table1_csv(dir.path(), 500, 4);
    let raw = dir.path().join("raw");
    let std = dir.path().join("std");
    assert_eq!(code(&fit_into(&input, &raw, &[])), 0);
    assert_eq!(code(&fit_into(&input, &std, &["--standardize"])), 0);
    let (_, data) = read_csv(&input);
    for fit_dir in [&raw, &std] {
        let pred = fit_dir.join("pred");
        let o = salmoe(&[
            "predict",
            "--model",
            fit_dir.join("model.json").to_str().unwrap(),
            "--input",
            input.to_str().unwrap(),
            "--out",
            pred.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let (h, rows) = read_csv(&pred.join("predictions.csv"));
        assert_eq!(h, ["mean", "variance", "lower", "upper"]);
        assert_eq!(rows.len(), data.len());
        for r in &rows {
            assert!((r[3] - r[2] - 4.0 * r[1].sqrt()).abs() < 1e-9 * (1.0 + r[1].sqrt()));
        }
        let covered = rows
            .iter()
            .zip(&data)
            .filter(|(r, d)| r[2] <= d[0] && d[0] <= r[3])
            .count();
        assert!(
            covered as f64 >= 0.93 * data.len() as f64,
            "coverage {covered}/{}",
            data.len()
        );
    }

    // Re-standardizing the back-transformed predictions reproduces the fitted-scale values.
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(std.join("report.json")).unwrap()).unwrap();
    let s = &report["data"]["standardization"];
    let (ym, ys) = (
        s["y"]["mean"].as_f64().unwrap(),
        s["y"]["sd"].as_f64().unwrap(),
    );
    let (xm, xs) = (
        s["covariates"]["x"]["mean"].as_f64().unwrap(),
        s["covariates"]["x"]["sd"].as_f64().unwrap(),
    );
    let model: SalMoeModel =
        serde_json::from_str(&fs::read_to_string(std.join("model.json")).unwrap()).unwrap();
    let (_, rows) = read_csv(&std.join("pred").join("predictions.csv"));
    for (r, d) in rows.iter().zip(&data).take(50) {
        let u = (d[1] - xm) / xs;
        let p = model.predict(&[1.0, u], &[1.0, u]).unwrap();
        assert!(((r[0] - ym) / ys - p.mean).abs() < 1e-10);
        assert!((r[1] / (ys * ys) - p.variance).abs() < 1e-10);
    }
}

#[test]
fn single_component_with_constant_covariates_predicts_constants() {
    let dir = TempDir::new().unwrap();
    let input = table1_csv(dir.path(), 200, 5);
    let out = dir.path().join("k1");
    let o = salmoe(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--y",
        "y",
        "--x",
        "x",
        "--k",
        "1",
        "--restarts",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let newdata = dir.path().join("new.csv");
    fs::write(&newdata, "x\n0.25\n0.25\n0.25\n").unwrap();
    let pred = dir.path().join("pred");
    let model = out.join("model.json");
    let o = salmoe(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--input",
        newdata.to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = read_csv(&pred.join("predictions.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r == &rows[0]));

    let wide = dir.path().join("wide.csv");
    fs::write(&wide, "x,w\n0.1,0.2\n").unwrap();
    let o = salmoe(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--input",
        wide.to_str().unwrap(),
        "--x",
        "x,w",
        "--out",
        pred.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("dimension mismatch"));
}

#[test]
fn cluster_labels_and_reference_scores() {
    let dir = TempDir::new().unwrap();
    let input = table1_csv(dir.path(), 400, 6);
    let fit_dir = dir.path().join("fit");
    assert_eq!(code(&fit_into(&input, &fit_dir, &[])), 0);
    let model = fit_dir.join("model.json");
    let run = |inp: &Path, out: &Path, reference: Option<&str>| {
        let mut args = vec![
            "cluster",
            "--model",
            model.to_str().unwrap(),
            "--input",
            inp.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        if let Some(r) = reference {
            args.extend_from_slice(&["--reference", r]);
        }
        salmoe(&args)
    };
    let first = dir.path().join("c1");
    assert_eq!(code(&run(&input, &first, Some("z"))), 0);
    let (h, rows) = read_csv(&first.join("labels.csv"));
    assert_eq!(h, ["label", "gamma_1", "gamma_2"]);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("metrics.json")).unwrap()).unwrap();
    let acc = metrics["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc) && acc > 0.8);

    // Feed the MAP labels back as the reference.
    let text = fs::read_to_string(&input).unwrap();
    let mut with_map = String::from("y,x,z,map\n");
    for (line, r) in text.lines().skip(1).zip(&rows) {
        with_map += &format!("{line},{}\n", r[0] as usize);
    }
    let relabeled = dir.path().join("map.csv");
    fs::write(&relabeled, with_map).unwrap();
    let second = dir.path().join("c2");
    assert_eq!(code(&run(&relabeled, &second, Some("map"))), 0);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(second.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["accuracy"], 1.0);
    assert_eq!(metrics["ari"], 1.0);
    assert_eq!(
        fs::read(first.join("labels.csv")).unwrap(),
        fs::read(second.join("labels.csv")).unwrap()
    );
}

#[test]
fn select_tabulates_criteria() {
    let dir = TempDir::new().unwrap();
    let input = table1_csv(dir.path(), 500, 7);
    let out = dir.path().join("sel");
    let o = salmoe(&[
        "select",
        "--input",
        input.to_str().unwrap(),
        "--y",
        "y",
        "--x",
        "x",
        "--k-range",
        "1..4",
        "--seed",
        "2",
        "--restarts",
        "8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = read_csv(&out.join("ic_table.csv"));
    assert_eq!(h, ["K", "loglik", "df", "bic", "icl", "panic"]);
    assert_eq!(rows.len(), 4);
    let best = rows
        .iter()
        .min_by(|a, b| a[3].partial_cmp(&b[3]).unwrap())
        .unwrap();
    assert_eq!(best[0], 2.0);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["chosen"]["bic"], 2);
    assert_eq!(summary["failures"].as_array().unwrap().len(), 0);

    let one = dir.path().join("one");
    let o = salmoe(&[
        "select",
        "--input",
        input.to_str().unwrap(),
        "--y",
        "y",
        "--x",
        "x",
        "--k-range",
        "1",
        "--restarts",
        "2",
        "--out",
        one.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let (_, rows) = read_csv(&one.join("ic_table.csv"));
    assert_eq!(rows.len(), 1);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(one.join("summary.json")).unwrap()).unwrap();
    assert_eq!(
        summary["chosen"],
        serde_json::json!({"bic": 1, "icl": 1, "panic": 1})
    );
}

#[test]
fn panic_column_equals_bic_at_the_calibration_size() {
    let dir = TempDir::new().unwrap();
    let input = table1_csv(dir.path(), 1000, 8);
    let out = dir.path().join("sel");
    let o = salmoe(&[
        "select",
        "--input",
        input.to_str().unwrap(),
        "--y",
        "y",
        "--x",
        "x",
        "--k-range",
        "1,2",
        "--restarts",
        "3",
        "--panic-beta",
        "2",
        "--panic-nu",
        "1000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = read_csv(&out.join("ic_table.csv"));
    for r in rows {
        assert!((r[3] - r[5]).abs() <= 1e-10 * r[3].abs());
    }
}

#[test]
fn simulate_is_deterministic_and_validates_names() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, out: &Path, extra: &[&str]| {
        let mut args = vec![
            "simulate",
            name,
            "--reps",
            "2",
            "--seed",
            "7",
            "--restarts",
            "3",
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        salmoe(&args)
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(
        code(&run("estimation-1", &a, &["--sample-sizes", "100,200"])),
        0
    );
    assert_eq!(
        code(&run("estimation-1", &b, &["--sample-sizes", "100,200"])),
        0
    );
    for f in ["summary.json", "replications.csv", "spec.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }

    let r = dir.path().join("robust");
    assert_eq!(code(&run("robust-1", &r, &["--n", "150"])), 0);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(r.join("summary.json")).unwrap()).unwrap();
    for c in ["0.01", "0.02", "0.03", "0.04", "0.05"] {
        let s = &summary[format!("source=sal,c={c}")];
        assert!(
            s["salmoe_rmse_median"].is_number() && s["gmoe_rmse_median"].is_number(),
            "c={c}"
        );
    }

    let o = run("estimation-3", &dir.path().join("x"), &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("order-S1"), "{}", stderr(&o));
}

#[test]
fn bootstrap_intervals() {
    let dir = TempDir::new().unwrap();
    let input = table1_csv(dir.path(), 300, 9);
    let fit_dir = dir.path().join("fit");
    assert_eq!(code(&fit_into(&input, &fit_dir, &[])), 0);
    let model = fit_dir.join("model.json");
    let run = |b: &str, out: &Path| {
        salmoe(&[
            "bootstrap",
            "--model",
            model.to_str().unwrap(),
            "--input",
            input.to_str().unwrap(),
            "--B",
            b,
            "--seed",
            "4",
            "--out",
            out.to_str().unwrap(),
        ])
    };
    let o = run("20", &dir.path().join("small"));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("at least 50"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&run("200", &a)), 0);
    assert_eq!(code(&run("200", &b)), 0);
    assert_eq!(
        fs::read(a.join("ci_table.csv")).unwrap(),
        fs::read(b.join("ci_table.csv")).unwrap()
    );
    let text = fs::read_to_string(a.join("ci_table.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "parameter,estimate,lower,upper");
    let mut count = 0;
    for line in lines {
        let v: Vec<&str> = line.split(',').collect();
        let (est, lo, hi): (f64, f64, f64) = (
            v[1].parse().unwrap(),
            v[2].parse().unwrap(),
            v[3].parse().unwrap(),
        );
        assert!(lo <= est && est <= hi, "{line}");
        count += 1;
    }
    assert_eq!(count, 10);
}
