use std::path::PathBuf;
use std::process::{Command, Output};

fn system(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../systems").join(name)
}

fn pcrit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcrit")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn analyze_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let input = system("degenerate_pair.json");
    let out = pcrit(&["analyze", "--input", input.to_str().unwrap(), "--output", report.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let results = &v["results"];
    assert_eq!(results["degeneracy"]["system_degenerate"], true);
    assert_eq!(results["angles"][0]["dirichlet"], 0.5);
    assert_eq!(results["critical_value"]["exact"], 0.9375);
    assert_eq!(v["C"], serde_json::json!([[1.0, 1.0]]));
}

#[test]
fn validate_names_the_pbh_failure() {
    let input = system("undetectable.json");
    let out = pcrit(&["validate", "--input", input.to_str().unwrap()]);
    assert_eq!(code(&out), 5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("PBH"));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["detectable"], false);

    let ok = pcrit(&["validate", "--input", system("scalar.json").to_str().unwrap()]);
    assert_eq!(code(&ok), 0);
}

#[test]
fn sweep_bracket_contains_the_analytic_value() {
    let input = system("scalar.json");
    let out = pcrit(&["sweep", "--input", input.to_str().unwrap(), "--resolution", "0.05"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(&headers.iter().take(4).collect::<Vec<_>>(), &["p", "verdict", "log_slope", "diverged_fraction"]);
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert!(rows.len() >= 3);
    let last = rows.last().unwrap();
    let lo: f64 = last[col("bracket_low")].parse().unwrap();
    let hi: f64 = last[col("bracket_high")].parse().unwrap();
    assert!(lo <= 0.75 && 0.75 <= hi, "bracket ({lo}, {hi})");
    assert!(hi - lo <= 0.05);
    assert_eq!(&last[col("analytic_pc")], "0.75");
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = system("degenerate_pair.json");
    let run = |name: &str, jobs: &str| {
        let path = dir.path().join(name);
        let out = pcrit(&[
            "simulate", "--input", input.to_str().unwrap(), "--output", path.to_str().unwrap(),
            "--p", "0.9", "--horizon", "80", "--trials", "64", "--jobs", jobs,
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(path).unwrap()
    };
    let a = run("a.csv", "1");
    let b = run("b.csv", "1");
    let c = run("c.csv", "3");
    assert_eq!(a, b);
    assert_eq!(a, c);

    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,mean_trace,q50,q90,q99"));
    assert_eq!(lines.count(), 80);
}

#[test]
fn seed_changes_the_samples() {
    let input = system("scalar.json");
    let run = |seed: &str| {
        pcrit(&["simulate", "--input", input.to_str().unwrap(), "--p", "0.6", "--horizon", "40", "--trials", "32", "--seed", seed])
            .stdout
    };
    assert_ne!(run("1"), run("2"));
}

#[test]
fn failures_have_distinct_exit_codes() {
    let scalar = system("scalar.json");
    let scalar = scalar.to_str().unwrap();
    assert_eq!(code(&pcrit(&["frobnicate", "--input", scalar])), 2);
    assert_eq!(code(&pcrit(&["simulate", "--input", scalar])), 2);
    assert_eq!(code(&pcrit(&["analyze", "--input", "/nonexistent/system.json"])), 3);
    assert_eq!(code(&pcrit(&["simulate", "--input", scalar, "--p", "1.5"])), 8);
    assert_eq!(code(&pcrit(&["simulate", "--input", scalar, "--p", "half"])), 8);
    assert_eq!(code(&pcrit(&["sweep", "--input", scalar, "--resolution", "0.001"])), 8);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"A": [[1.0, 2.0]], "C": [[1.0]], "Q": [[1.0]], "R": [[1.0]], "Sigma0": [[1.0]]}"#).unwrap();
    assert_eq!(code(&pcrit(&["analyze", "--input", bad.to_str().unwrap()])), 4);

    let undetectable = system("undetectable.json");
    assert_eq!(code(&pcrit(&["simulate", "--input", undetectable.to_str().unwrap(), "--p", "0.5"])), 5);
}

#[test]
fn every_bundled_system_analyzes() {
    for (name, want) in [
        ("scalar.json", Some(0.75)),
        ("degenerate_pair.json", Some(0.9375)),
        ("observed_pair.json", Some(0.75)),
        ("four_modes.json", Some(8.0 / 9.0)),
        ("rotation_irrational.json", Some(0.75)),
    ] {
        let out = pcrit(&["analyze", "--input", system(name).to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{name}");
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["results"]["critical_value"]["exact"].as_f64(), want, "{name}");
    }
}
