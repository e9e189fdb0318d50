use std::path::Path;
use std::process::{Command, Output};

use cvmdi::energy_test::{fig1_curve, log_grid, Fig1Scheme};
use cvmdi::keyrate::{fig2_curve, fig2_default_params, Scheme};
use serde::Deserialize;

fn cvmdi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvmdi")).current_dir(dir).args(args).output().expect("binary runs")
}

fn config(dir: &Path, body: &str) {
    std::fs::write(dir.join("c.json"), body).unwrap();
}

#[test]
fn simulate_is_byte_identical_for_the_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    config(dir.path(), r#"{"schema_version": 1, "seed": 9, "rounds": 10000}"#);
    for out in ["a.bin", "b.bin"] {
        let o = cvmdi(dir.path(), &["simulate", "--rep", "pm", "--config", "c.json", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (std::fs::read(dir.path().join("a.bin")).unwrap(), std::fs::read(dir.path().join("b.bin")).unwrap());
    assert_eq!(a.len(), 86 + 10_000 * 80);
    assert_eq!(a, b);
    config(dir.path(), r#"{"schema_version": 1, "seed": 10, "rounds": 10000}"#);
    cvmdi(dir.path(), &["simulate", "--rep", "pm", "--config", "c.json", "--out", "b.bin"]);
    assert_ne!(a, std::fs::read(dir.path().join("b.bin")).unwrap());
}

#[test]
fn local_estimate_on_eb_records_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    config(dir.path(), r#"{"schema_version": 1, "seed": 1, "rounds": 2000}"#);
    cvmdi(dir.path(), &["simulate", "--rep", "eb", "--config", "c.json", "--out", "e.bin"]);
    let o = cvmdi(dir.path(), &["estimate", "--mode", "local", "--k", "all", "--t", "0.1", "--in", "e.bin"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing pre-displacement amplitudes"));

    let o = cvmdi(dir.path(), &["--json-errors", "estimate", "--mode", "local", "--t", "0.1", "--in", "e.bin"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(v["error"]["code"], 2);
    assert_eq!(v["error"]["kind"], "validation");
}

#[test]
fn too_few_samples_for_the_target_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    config(dir.path(), r#"{"schema_version": 1, "seed": 1, "rounds": 200}"#);
    cvmdi(dir.path(), &["simulate", "--rep", "pm", "--config", "c.json", "--out", "r.bin"]);
    let o = cvmdi(dir.path(), &["estimate", "--mode", "local", "--eps", "1e-20", "--in", "r.bin"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for body in
        [r#"{"schema_version": 1, "rounds": 10}"#, r#"{"schema_version": 1, "seed": 1, "rounds": 10, "colour": 1}"#]
    {
        config(dir.path(), body);
        let o = cvmdi(dir.path(), &["simulate", "--rep", "eb", "--config", "c.json", "--out", "x.bin"]);
        assert_eq!(o.status.code(), Some(2), "{body}");
    }
    config(dir.path(), r#"{"schema_version": 1, "seed": 1}"#);
    let o = cvmdi(dir.path(), &["simulate", "--rep", "eb", "--config", "c.json", "--out", "x.bin"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn estimate_report_carries_bounds_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    config(dir.path(), r#"{"schema_version": 1, "seed": 2, "rounds": 20000}"#);
    cvmdi(dir.path(), &["simulate", "--rep", "pm", "--config", "c.json", "--out", "r.bin"]);
    let o = cvmdi(
        dir.path(),
        &["estimate", "--mode", "local", "--k", "10000", "--t", "0.1", "--in", "r.bin", "--report", "e.json"],
    );
    assert!(o.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("e.json")).unwrap()).unwrap();
    assert_eq!(v["k"], 10000);
    assert_eq!(v["units"]["loss"], "dB");
    assert_eq!(v["input"]["representation"], "pm");
    assert_eq!(v["worst_case_cm"]["entries"].as_array().unwrap().len(), 16);
    assert!(v["bounds"]["uninformative"].is_boolean());
    let c = v["confidence"].as_f64().unwrap();
    assert!((c - (1.0 - 12.0 * (-10000.0f64 * 0.01 / 8.0).exp())).abs() < 1e-12);
}

#[test]
fn energy_test_reports() {
    let dir = tempfile::tempdir().unwrap();
    config(dir.path(), r#"{"schema_version": 1, "seed": 4, "rounds": 4000}"#);
    cvmdi(dir.path(), &["simulate", "--rep", "eb", "--config", "c.json", "--out", "r.bin"]);
    let o = cvmdi(
        dir.path(),
        &["energy-test", "--variant", "efficient", "--dA", "30", "--dB", "30", "--eps", "1e-10", "--in", "r.bin"],
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["outcome"]["passed"], true);
    assert_eq!(v["outcome"]["key_eligible"], 4000);
    let args = [
        "energy-test",
        "--variant",
        "leverrier",
        "--k",
        "2000",
        "--dA",
        "30",
        "--dB",
        "30",
        "--eps",
        "1e-10",
        "--in",
        "r.bin",
    ];
    assert_eq!(cvmdi(dir.path(), &args).status.code(), Some(2), "seed is mandatory");
    let o = cvmdi(dir.path(), &[&args[..], &["--seed", "5"]].concat());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["outcome"]["key_eligible"], 2000);
    assert_eq!(v["unitary_seed"], 5);
}

#[derive(Debug, Deserialize, PartialEq)]
struct Fig1Line {
    scheme: String,
    n: f64,
    normalized_dimension: Option<f64>,
}

#[test]
fn fig1_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = cvmdi(dir.path(), &["fig1", "--out", "f.csv", "--ngrid", "1e3:1e10:log"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    assert!(text.starts_with("scheme,n,normalized_dimension\n"));
    let got: Vec<Fig1Line> = csv::Reader::from_reader(text.as_bytes()).deserialize().map(Result::unwrap).collect();
    let want = fig1_curve(&log_grid(1e3, 1e10, 71), &Fig1Scheme::default_set(), 1e-20).unwrap();
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!((&g.scheme, g.n, g.normalized_dimension), (&w.scheme, w.n, w.normalized_dimension));
    }
    // small n leaves the sacrifice-based schemes infeasible; those rows stay, empty
    assert!(got.iter().any(|g| g.normalized_dimension.is_none()));
    let schemes: std::collections::BTreeSet<_> = got.iter().map(|g| g.scheme.as_str()).collect();
    assert_eq!(schemes.len(), 4);
}

#[derive(Debug, Deserialize, PartialEq)]
struct RateLine {
    scheme: String,
    n: f64,
    rate: f64,
    feasible: bool,
}

#[test]
fn rate_tables_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    config(dir.path(), r#"{"schema_version": 1, "seed": 0, "protocol": {"loss_a_db": 0.3, "loss_b_db": 0.3}}"#);
    let o = cvmdi(
        dir.path(),
        &[
            "keyrate",
            "--config",
            "c.json",
            "--schemes",
            "efficient,trad:1e-2,trad:1e-3",
            "--ngrid",
            "1e4:1e10:log",
            "--out",
            "k.csv",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let got: Vec<RateLine> =
        csv::Reader::from_path(dir.path().join("k.csv")).unwrap().deserialize().map(Result::unwrap).collect();
    let p = fig2_default_params();
    let p = cvmdi::protocol::ProtocolParams { loss_a_db: 0.3, loss_b_db: 0.3, ..p };
    let want = fig2_curve(&p, &log_grid(1e4, 1e10, 61), &Scheme::default_set(), 1e-20, 0.95).unwrap();
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!((&g.scheme, g.n, g.rate, g.feasible), (&w.scheme, w.n, w.rate, w.feasible));
    }
    assert!(got.iter().any(|g| g.rate > 0.0));

    let o = cvmdi(dir.path(), &["fig2", "--out", "f.csv"]);
    assert!(o.status.success());
    let f: Vec<RateLine> =
        csv::Reader::from_path(dir.path().join("f.csv")).unwrap().deserialize().map(Result::unwrap).collect();
    assert_eq!(f.len(), 4 * 61);
    assert_eq!(f[0].scheme, "asymptotic");
}

#[test]
fn tailcheck_csv_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = cvmdi(
        dir.path(),
        &["tailcheck", "--k", "100", "--t", "0.5", "--trials", "2000", "--seed", "3", "--out", "t.csv"],
    );
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("id,k,t,analytic_bound,empirical_rate,stderr,trials,seed"));
    assert_eq!(lines.count(), 10);
    let again = cvmdi(
        dir.path(),
        &["tailcheck", "--k", "100", "--t", "0.5", "--trials", "2000", "--seed", "3", "--out", "u.csv"],
    );
    assert!(again.status.success());
    assert_eq!(text, std::fs::read_to_string(dir.path().join("u.csv")).unwrap());
}
