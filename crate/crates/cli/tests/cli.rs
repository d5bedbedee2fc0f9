use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_contdid"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("contdid-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: {}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn assert_schema_valid(doc: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema/report.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(doc)
        .map(|e| format!("{e} at {}", e.instance_path()))
        .collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

fn simulate(dir: &Path, name: &str, sets: &[&str]) -> String {
    let path = dir.join(name);
    let mut args = vec![
        "simulate",
        "--seed",
        "5",
        "--output",
        path.to_str().unwrap(),
    ];
    for s in sets {
        args.push("--set");
        args.push(s);
    }
    let out = run(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    path.to_str().unwrap().to_string()
}

#[test]
fn both_methods_report_differences() {
    let dir = scratch("both");
    let csv = simulate(&dir, "p.csv", &["n=400"]);
    let out = run(&[
        "estimate", "--input", &csv, "--target", "delta2", "--method", "both", "--boot", "20",
        "--seed", "2",
    ]);
    assert!(out.status.success());
    let doc = json(&out);
    assert_schema_valid(&doc);
    let diffs = doc["differences"].as_array().unwrap();
    let targets: Vec<&str> = diffs
        .iter()
        .map(|d| d["target"].as_str().unwrap())
        .collect();
    assert_eq!(targets, ["delta2i", "delta2d", "delta2"]);
    for d in diffs {
        let gap = d["regression"].as_f64().unwrap() - d["pscore"].as_f64().unwrap();
        assert!((gap - d["difference"].as_f64().unwrap()).abs() < 1e-12);
        assert!(d["se"].as_f64().unwrap() > 0.0);
    }
    let methods: Vec<&str> = doc["estimates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["method"].as_str().unwrap())
        .collect();
    assert!(methods.contains(&"regression") && methods.contains(&"pscore"));
}

#[test]
fn all_stayers_exit_with_no_movers() {
    let dir = scratch("stayers");
    let csv = simulate(&dir, "p.csv", &["n=100", "p_stay=1"]);
    let out = run(&["estimate", "--input", &csv, "--target", "delta1"]);
    assert_eq!(out.status.code(), Some(2));
    let doc = json(&out);
    assert_schema_valid(&doc);
    assert_eq!(doc["error"]["code"], "NoMovers");
}

#[test]
fn dynamic_effects_up_to_requested_horizon() {
    let dir = scratch("dynamic");
    let csv = simulate(
        &dir,
        "p.csv",
        &["n=600", "periods=4", "regime=staggered", "lags=1,2"],
    );
    let out = run(&[
        "estimate",
        "--input",
        &csv,
        "--target",
        "delta_plus",
        "--lmax",
        "2",
        "--boot",
        "10",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let doc = json(&out);
    assert_schema_valid(&doc);
    let est = doc["estimates"].as_array().unwrap();
    for target in ["delta_plus_l", "delta_plus_d_l"] {
        let ells: Vec<u64> = est
            .iter()
            .filter(|e| e["target"] == target)
            .map(|e| e["ell"].as_u64().unwrap())
            .collect();
        assert_eq!(ells, [0, 1, 2], "{target}");
    }
    assert_eq!(
        est.iter().filter(|e| e["target"] == "delta_plus").count(),
        1
    );
    let weights: f64 = doc["dynamic"][0]["weights"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| w["weight"].as_f64().unwrap())
        .sum();
    assert!((weights - 1.0).abs() < 1e-12);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = scratch("usage");
    let csv = simulate(&dir, "p.csv", &["n=100"]);
    for args in [
        vec!["estimate", "--input", csv.as_str(), "--no-such-flag"],
        vec!["estimate", "--input", csv.as_str(), "--target", "delta7"],
        vec![
            "estimate",
            "--input",
            csv.as_str(),
            "--target",
            "delta1",
            "--ell",
            "1",
        ],
        vec![
            "estimate",
            "--input",
            csv.as_str(),
            "--target",
            "delta1",
            "--method",
            "ps",
        ],
        vec!["estimate", "--input", csv.as_str(), "--ci-level", "1.5"],
        vec!["simulate", "--set", "nonsense=3"],
        vec!["bogus"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
    let out = run(&["estimate", "--input", &csv, "--target", "delta7"]);
    let doc = json(&out);
    assert_schema_valid(&doc);
    assert_eq!(doc["error"]["code"], "UsageError");
}

#[test]
fn missing_input_file_is_a_run_error() {
    let out = run(&["estimate", "--input", "/nonexistent/panel.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(json(&out)["error"]["code"].is_string());
}

#[test]
fn single_replication_montecarlo_has_no_mcse() {
    let out = run(&[
        "montecarlo",
        "--set",
        "n=200",
        "--reps",
        "1",
        "--target",
        "delta1,twfe",
    ]);
    assert!(out.status.success());
    let doc = json(&out);
    assert_schema_valid(&doc);
    for row in doc["rows"].as_array().unwrap() {
        assert!(row["mcse"].is_null());
        assert_eq!(row["n_ok"], 1);
    }
    let twfe = doc["rows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["target"] == "twfe")
        .unwrap();
    assert!(twfe["bias"].is_null());
}

#[test]
fn diagnose_and_tsv_outputs() {
    let dir = scratch("diagnose");
    let csv = simulate(&dir, "p.csv", &["n=150", "periods=3"]);
    let out = run(&["diagnose", "--input", &csv]);
    assert!(out.status.success());
    let doc = json(&out);
    assert_schema_valid(&doc);
    assert_eq!(doc["diagnostics"]["panel"]["n_units"], 150);
    assert_eq!(
        doc["diagnostics"]["transitions"].as_array().unwrap().len(),
        2
    );

    let out = run(&[
        "estimate",
        "--input",
        &csv,
        "--target",
        "delta1,twfe",
        "--format",
        "tsv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("target\t"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn simulated_truth_file_and_custom_columns() {
    let dir = scratch("truth");
    let csv = dir.join("p.csv");
    let truth = dir.join("t.json");
    let out = run(&[
        "simulate",
        "--set",
        "n=50",
        "--set",
        "slope=point(2)",
        "--output",
        csv.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let t: Value = serde_json::from_str(&std::fs::read_to_string(&truth).unwrap()).unwrap();
    assert_eq!(t["units"].as_array().unwrap().len(), 50);
    assert!((t["oracle"]["delta1"].as_f64().unwrap() - 2.0).abs() < 1e-12);

    let renamed = std::fs::read_to_string(&csv)
        .unwrap()
        .replacen("unit,time,d,y", "id;year;dose;outcome", 1)
        .replace(',', ";");
    let alt = dir.join("alt.csv");
    std::fs::write(&alt, renamed).unwrap();
    let a = run(&[
        "estimate",
        "--input",
        csv.to_str().unwrap(),
        "--target",
        "twfe",
    ]);
    let b = run(&[
        "estimate",
        "--input",
        alt.to_str().unwrap(),
        "--target",
        "twfe",
        "--unit",
        "id",
        "--time",
        "year",
        "--d",
        "dose",
        "--y",
        "outcome",
        "--delimiter",
        ";",
    ]);
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stdout));
    assert_eq!(json(&a)["estimates"], json(&b)["estimates"]);
}
