use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fracuc"));
    c.env_remove("FRACUC_ARMA_TABLE");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) {
    let o = run(args, dir);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn simulated(dir: &Path) {
    ok(
        &["simulate", "--b", "0.6", "--beta", "1,0.8", "--sigma", "0.5,0.5", "--n", "300", "--seed", "3", "--out-dir", "sim"],
        dir,
    );
}

const QUICK: [&str; 6] = ["--n-starts", "30", "--top-k", "1", "--start-iters", "0"];

#[test]
fn pipeline_artifacts_follow_their_contracts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulated(d);
    let mut args = vec!["fit", "--data", "sim/sim.csv", "--seed", "5", "--out-dir", "out"];
    args.extend(QUICK);
    ok(&args, d);
    let fit = json(d.join("out/fit.json"));
    for key in ["theta_hat", "se", "loglik", "converged", "flags", "config"] {
        assert!(fit.get(key).is_some(), "fit.json lacks {key}");
    }
    for key in ["beta", "sigma_diag", "b", "sigma_eta2"] {
        assert!(fit["theta_hat"].get(key).is_some());
    }
    assert_eq!(fit["theta_hat"]["beta"].as_array().unwrap().len(), 2);

    ok(&["extract", "--fit", "out/fit.json", "--data", "sim/sim.csv", "--out-dir", "out"], d);
    let trend = std::fs::read_to_string(d.join("out/trend.csv")).unwrap();
    let mut lines = trend.lines();
    assert_eq!(lines.next().unwrap(), "date,trend,band_lo,band_hi,idio_y1,idio_y2,eta_hat");
    assert_eq!(lines.clone().count(), 300);
    for l in lines {
        let f: Vec<f64> = l.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert_eq!(f.len(), 6);
        assert!(f[1] <= f[0] && f[0] <= f[2]);
    }

    ok(&["diagnose", "--data", "out/trend.csv", "--columns", "eta_hat", "--out-dir", "diag"], d);
    let diag = json(d.join("diag/diagnostics.json"));
    assert_eq!(diag[0]["name"], "eta_hat");
    assert!(diag[0]["elw"]["d_hat"].as_f64().unwrap().abs() < 0.5);
    assert!(d.join("diag/periodogram_eta_hat.csv").exists());
    for cmd in ["simulate", "extract"] {
        let dir = if cmd == "simulate" { "sim" } else { "out" };
        let m = json(d.join(format!("{dir}/{cmd}.manifest.json")));
        assert_eq!(m["command"], cmd);
        assert!(m["finished_unix"].as_f64().unwrap() >= m["started_unix"].as_f64().unwrap());
    }
}

#[test]
fn manifest_rerun_reproduces_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulated(d);
    let mut args = vec!["--threads", "2", "fit", "--data", "sim/sim.csv", "--seed", "9", "--out-dir", "a"];
    args.extend(QUICK);
    ok(&args, d);
    ok(&["rerun", "a/fit.manifest.json", "--out-dir", "b"], d);
    assert_eq!(
        std::fs::read(d.join("a/fit.json")).unwrap(),
        std::fs::read(d.join("b/fit.json")).unwrap()
    );
    let m = json(d.join("a/fit.manifest.json"));
    assert_eq!(m["seed"], 9);
    assert_eq!(m["threads"], 2);
    assert_eq!(m["config"]["fit"]["n_starts"], 30);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulated(d);
    std::fs::write(d.join("cfg.json"), r#"{"n_starts": 12, "top_k": 1, "start_iters": 0, "m": 2}"#).unwrap();
    ok(&["fit", "--data", "sim/sim.csv", "--config", "cfg.json", "--m", "3", "--out-dir", "o"], d);
    let m = json(d.join("o/fit.manifest.json"));
    assert_eq!(m["config"]["fit"]["n_starts"], 12);
    assert_eq!(m["config"]["fit"]["m"], 3);
}

#[test]
fn unit_root_benchmark_fixes_b() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulated(d);
    let mut args = vec!["fit", "--data", "sim/sim.csv", "--i1", "--out-dir", "o"];
    args.extend(QUICK);
    ok(&args, d);
    let fit = json(d.join("o/fit.json"));
    assert_eq!(fit["theta_hat"]["b"], 1.0);
    assert!(fit["se"]["b"].is_null());
}

#[test]
fn errors_are_json_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("gap.csv"), "date,x\n2000-01,1\n2000-02,2\n2000-04,3\n").unwrap();
    let o = run(&["fit", "--data", "gap.csv"], d);
    assert!(!o.status.success());
    let e: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(e["command"], "fit");
    assert_eq!(e["kind"], "data");
    assert!(e["message"].as_str().unwrap().contains("2000-02"));

    let o = run(&["fit", "--nope"], d);
    assert_eq!(o.status.code(), Some(2));
    let e: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(e["kind"], "usage");

    let o = run(&["simulate", "--b", "1.7", "--beta", "1", "--sigma", "1", "--n", "10"], d);
    assert!(!o.status.success());
    let e: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(e["kind"], "model");
}

#[test]
fn table_flag_and_environment_are_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulated(d);
    let mut args = vec!["fit", "--data", "sim/sim.csv", "--mode", "arma", "--table", "missing.json", "--out-dir", "o"];
    args.extend(QUICK);
    assert!(!run(&args, d).status.success());
    let mut args = vec!["fit", "--data", "sim/sim.csv", "--mode", "arma", "--out-dir", "o"];
    args.extend(QUICK);
    let o = bin().args(&args).env("FRACUC_ARMA_TABLE", "missing.json").current_dir(d).output().unwrap();
    assert!(!o.status.success());
    // bundled table
    ok(&args, d);
    let fit = json(d.join("o/fit.json"));
    assert_eq!(fit["config"]["mode"], "arma");
}

#[test]
fn bench_and_mc_write_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["bench", "--n", "60", "--p", "2", "--repeats", "2", "--out-dir", "b"], d);
    let csv = std::fs::read_to_string(d.join("b/bench.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "60");
    assert!(row[7].parse::<f64>().unwrap() < 1e-8);

    ok(
        &[
            "mc", "--b", "0.6", "--beta", "1,0.8", "--sigma", "0.5,0.5", "--n", "120", "--reps", "3", "--targets",
            "consistency", "--n-starts", "6", "--seed", "2", "--out-dir", "mc",
        ],
        d,
    );
    let rep = json(d.join("mc/mc_report.json"));
    assert_eq!(rep["records"].as_array().unwrap().len(), 3);
    assert_eq!(std::fs::read_to_string(d.join("mc/mc_records.csv")).unwrap().lines().count(), 4);
}

#[test]
fn csv_output_is_locale_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = bin()
        .args(["simulate", "--b", "0.4", "--beta", "1", "--sigma", "1", "--n", "50", "--out-dir", "s"])
        .env("LC_ALL", "de_DE.UTF-8")
        .env("LC_NUMERIC", "de_DE.UTF-8")
        .current_dir(d)
        .output()
        .unwrap();
    assert!(o.status.success());
    let s = std::fs::read_to_string(d.join("s/sim.csv")).unwrap();
    for l in s.lines().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f.len(), 2);
        assert!(f[1].parse::<f64>().is_ok());
    }
}
