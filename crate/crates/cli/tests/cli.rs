use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn sparc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sparc")).args(args).output().expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    sparc(args).status.code().expect("exit code")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn usage_and_config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    assert_eq!(code(&["bogus"]), 2);
    assert_eq!(code(&["validate", "--jobs", "0", "--out", out]), 2);
    assert_eq!(code(&["validate", "--seed", "x", "--out", out]), 2);

    let unknown = write_config(tmp.path(), "[release]\nk_x = [300]\nbogus = 1\n");
    assert_eq!(code(&["validate", "--config", &unknown, "--out", out]), 2);
    let empty = write_config(tmp.path(), "[static_sweep]\nk_x = []\n");
    assert_eq!(code(&["static-sweep", "--config", &empty, "--out", out]), 2);
    let missing = tmp.path().join("nope.toml");
    assert_eq!(code(&["validate", "--config", missing.to_str().unwrap(), "--out", out]), 2);

    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let under_file = blocker.join("out");
    assert_eq!(code(&["validate", "--out", under_file.to_str().unwrap()]), 2);
}

#[test]
fn invalid_model_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("neg");
    let o = sparc(&["validate", "--inject-negative-mass", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model invariants"));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn validate_writes_manifest_last() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    assert_eq!(code(&["validate", "--seed", "5", "--out", out.to_str().unwrap()]), 0);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "validate");
    assert_eq!(manifest["seed"], 5);
    let manifest_time = fs::metadata(out.join("manifest.json")).unwrap().modified().unwrap();
    let files = manifest["files"].as_array().unwrap();
    assert!(files.iter().any(|f| f == "validate_seed5.csv"));
    for f in files {
        let meta = fs::metadata(out.join(f.as_str().unwrap())).unwrap();
        assert!(meta.modified().unwrap() <= manifest_time);
    }
    let (header, rows) = read_csv(&out.join("validate_seed5.csv"));
    assert_eq!(header, ["property", "result", "gated", "detail"]);
    assert!(rows.iter().all(|r| r[1] == "pass" || r[2] == "0"));
}

#[test]
fn single_k_override_gives_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[static_sweep]\nk_x = [500]\n");
    let out = tmp.path().join("s");
    assert_eq!(code(&["static-sweep", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]), 0);
    let (header, rows) = read_csv(&out.join("static_summary_seed3.csv"));
    assert_eq!(rows.len(), 1);
    let k_hat = column(&header, &rows, "k_hat_N_m")[0];
    assert!((k_hat - 500.0).abs() < 10.0, "{k_hat}");
    let sidecar: Value = serde_json::from_str(&fs::read_to_string(out.join("static_k500_seed3.json")).unwrap()).unwrap();
    assert_eq!(sidecar["data"], "static_k500_seed3.csv");
    assert_eq!(sidecar["seed"], 3);
    let (trial_header, _) = read_csv(&out.join("static_k500_seed3.csv"));
    assert_eq!(trial_header[0], "t_s");
    assert_eq!(trial_header.last().unwrap(), "used_in_fit");
}

#[test]
fn single_trial_release_has_zero_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[release]\nk_x = [300]\nd_x = [40]\nn_trials = 1\nduration = 0.5\nhold_ramp = 0.2\nhold_dwell = 0.1\n",
    );
    let out = tmp.path().join("r");
    assert_eq!(code(&["release", "--config", &cfg, "--out", out.to_str().unwrap()]), 0);
    let (header, rows) = read_csv(&out.join("release_k300_b40_seed0.csv"));
    assert_eq!(rows.len(), 501);
    assert!(column(&header, &rows, "x_sd_m").iter().all(|v| *v == 0.0));
    assert!(out.join("release_k300_b40_seed0_trial0.csv").exists());
    assert!(!out.join("release_k300_b40_seed0_trial1.csv").exists());
    let (_, summary) = read_csv(&out.join("release_summary_seed0.csv"));
    assert_eq!(summary.len(), 1);
}

#[test]
fn repeated_pd_readings_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[pd_sweep]\nk_x = [400]\ndisplacements = [0.01]\nrepeats = 4\n",
    );
    let out = tmp.path().join("p");
    assert_eq!(code(&["pd-sweep", "--config", &cfg, "--out", out.to_str().unwrap()]), 0);
    let (header, rows) = read_csv(&out.join("pd_sweep_seed0.csv"));
    assert_eq!(rows.len(), 1);
    assert!(column(&header, &rows, "sd_force_N")[0] > 0.0);
    let (_, readings) = read_csv(&out.join("pd_readings_seed0.csv"));
    assert_eq!(readings.len(), 4);
}
