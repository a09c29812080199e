use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/small.toml")
}

fn triband(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_triband")).args(args).env_remove("TRIBAND_OUT").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn manifest_paths(dir: &Path) -> Vec<String> {
    let m = read_json(&dir.join("manifest.json"));
    m["outputs"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap().to_string()).collect()
}

/// Every regular file under `dir` except the manifest, relative paths.
fn files_under(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
                if rel != "manifest.json" {
                    out.push(rel);
                }
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_writes_tables_summary_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = triband(&["simulate", fixture().to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let summary = read_json(&out.join("summary.json"));
    for key in ["throughput_tbps", "gsnr_pp_dB", "per_band"] {
        assert!(summary.get(key).is_some(), "{key}");
    }
    assert_eq!(summary["per_band"].as_array().unwrap().len(), 2);
    assert!(summary["raman"]["on_off_gain_dB"].as_array().unwrap().len() == 10);

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let header = metrics.lines().next().unwrap();
    for col in ["freq_THz", "launch_dBm", "OSNR_dB", "OSNR_dfa_only_dB", "GSNR_NLI_dB", "GSNR_dB", "IR_Tbps"] {
        assert!(header.split(',').any(|h| h == col), "{col}");
    }
    assert_eq!(metrics.lines().count(), 11);
    // identical spans share one profile
    assert!(out.join("profiles/span00.csv").exists());
    assert!(!out.join("profiles/span01.csv").exists());

    let mut listed = manifest_paths(&out);
    listed.sort();
    assert_eq!(listed, files_under(&out));
}

#[test]
fn written_scenario_reloads_to_the_same_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = triband(&["simulate", fixture().to_str().unwrap(), "--isrs", "off", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let hash = read_json(&out.join("manifest.json"))["scenario_hash"].as_str().unwrap().to_string();
    let v = triband(&["validate", out.join("scenario.toml").to_str().unwrap()]);
    assert_eq!(code(&v), 0);
    let stdout = String::from_utf8(v.stdout).unwrap();
    assert!(stdout.contains(&format!("hash: {hash}")), "{stdout}");
    assert!(stdout.contains("isrs: off"));
}

#[test]
fn missing_scenario_is_a_config_error_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = triband(&["simulate", "/nonexistent/scenario.toml", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
    assert!(!o.stderr.is_empty());
}

#[test]
fn invalid_scenario_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    let text = std::fs::read_to_string(fixture()).unwrap().replace("spacing_ghz = 150.0", "spacing_ghz = -1.0");
    std::fs::write(&bad, text).unwrap();
    let o = triband(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.spacing_ghz"));
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&triband(&["frobnicate"])), 64);
    assert_eq!(code(&triband(&["simulate"])), 64);
    assert_eq!(code(&triband(&["oracle-check", fixture().to_str().unwrap(), "--channels", ""])), 64);
    assert_eq!(code(&triband(&["optimize", fixture().to_str().unwrap(), "--budget", "0"])), 64);
    assert_eq!(code(&triband(&["--help"])), 0);
}

#[test]
fn out_directory_defaults_to_environment_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_triband"))
        .args(["sweep", fixture().to_str().unwrap(), "--from", "-2", "--to", "2", "--step", "2"])
        .env("TRIBAND_OUT", &out)
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(table.starts_with("launch_dBm,throughput_Tbps,mean_IR_Tbps,GSNR_min_dB,GSNR_max_dB,throughput_C_Tbps,throughput_S_Tbps"));
    assert_eq!(table.lines().count(), 4);
    assert!(!tmp.path().join("triband-out").exists());
}

#[test]
fn oracle_check_passes_and_breaches() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ok");
    let args = |out: &Path, tol: &str| {
        triband(&[
            "oracle-check",
            fixture().to_str().unwrap(),
            "--isrs",
            "off",
            "--channels",
            "0,2,7",
            "--tol",
            tol,
            "--out",
            out.to_str().unwrap(),
        ])
    };
    let o = args(&out, "1.0");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("oracle_check.csv")).unwrap();
    assert!(table.starts_with("channel,freq_THz,P_NLI_cf_W,P_NLI_oracle_W,delta_dB"));
    assert_eq!(table.lines().count(), 4);

    let o = args(&tmp.path().join("strict"), "0");
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("worst"));
}

fn optimize_run(out: &Path, extra: &[&str]) -> Output {
    let scenario = fixture();
    let mut args = vec!["optimize", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    triband(&args)
}

#[test]
fn optimize_report_is_feasible_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let extra = ["--objective", "eq2", "--pumps", "1", "--budget", "12", "--seed", "7"];
    let oa = optimize_run(&a, &extra);
    assert_eq!(code(&oa), 0, "{}", String::from_utf8_lossy(&oa.stderr));
    assert_eq!(code(&optimize_run(&b, &extra)), 0);

    let strip = |p: &Path| {
        let mut v = read_json(&p.join("report.json"));
        v.as_object_mut().unwrap().remove("wall_clock_s");
        v
    };
    let ra = strip(&a);
    assert_eq!(ra, strip(&b));
    assert_eq!(ra["objective"], "mean_ir_minus_spread");
    assert!(ra["mean_ir_tbps"].is_number() && ra["ir_spread_tbps"].is_number());
    assert_eq!(ra["evaluations"], 12);
    for p in ra["pumps"].as_array().unwrap() {
        assert!(p["power_dbm"].as_f64().unwrap() <= 24.0 + 1e-9);
        assert!(p["freq_thz"].as_f64().unwrap() >= 211.5 - 1e-9);
    }
    let trace = ra["trace"].as_array().unwrap();
    let best: Vec<f64> = trace.iter().map(|e| e["best_so_far"].as_f64().unwrap()).collect();
    assert!(best.windows(2).all(|w| w[1] >= w[0]));

    let mut listed = manifest_paths(&a);
    listed.sort();
    assert_eq!(listed, files_under(&a));
    assert_eq!(read_json(&a.join("manifest.json"))["seed"], 7);
}

#[test]
fn optimize_with_inconsistent_caps_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = optimize_run(&tmp.path().join("x"), &["--pumps", "3", "--pump-caps", "27,27,27", "--budget", "5"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
}

#[test]
fn optimum_launch_is_flat_without_isrs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("flat");
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/flat.toml");
    let o = triband(&["optimize", scenario.to_str().unwrap(), "--isrs", "off", "--budget", "300", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("metrics.csv")).unwrap();
    let col = rdr.headers().unwrap().iter().position(|h| h == "launch_dBm").unwrap();
    let launch: Vec<f64> = rdr.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
    let (lo, hi) = launch.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    assert!(hi - lo < 1.0, "{launch:?}");
}
