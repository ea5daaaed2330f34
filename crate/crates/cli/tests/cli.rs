use std::path::Path;
use std::process::{Command, Output};

fn akte(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_akte")).args(args).env_remove("AKTE_MASTER_SEED").output().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn simulate_then_test_prints_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.jsonl");
    let traj = traj.to_str().unwrap();
    let out = akte(&["simulate", "--scenario", "II", "-T", "120", "--seed", "5", "-o", traj]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = std::fs::read_to_string(traj).unwrap().lines().count();
    assert_eq!(lines, 121);

    let v = stdout_json(&akte(&["test", "--method", "vs-dr-kte", "--alpha", "0.05", "--split", "alternating", traj]));
    assert_eq!(v["method"], "vs-dr-kte");
    let (stat, p) = (v["statistic"].as_f64().unwrap(), v["p_value"].as_f64().unwrap());
    assert!(stat.is_finite() && (0.0..=1.0).contains(&p));
    assert_eq!(v["reject"].as_bool().unwrap(), p < 0.05);

    let v = stdout_json(&akte(&["test", "-m", "cadr", "-m", "aw-aipw-constant", traj]));
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[test]
fn unknown_method_lists_available() {
    let out = akte(&["test", "--method", "bogus", "nowhere.jsonl"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    for m in ["vs-dr-kte", "dr-kte-unstabilized", "cadr", "aw-aipw-constant", "aw-aipw-two-point"] {
        assert!(err.contains(m), "{err}");
    }
}

#[test]
fn malformed_config_names_path_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"horizon": 100, "test": {"lambda": "tiny"}}"#);
    let out = akte(&["calibrate", &cfg]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json") && err.contains("test.lambda"), "{err}");

    let cfg = write(dir.path(), "method.json", r#"{"methods": ["vs-dr-kte", "ols"]}"#);
    let err = String::from_utf8_lossy(&akte(&["calibrate", &cfg]).stderr).to_string();
    assert!(err.contains("methods") && err.contains("ols") && err.contains("cadr"), "{err}");
}

#[test]
fn calibrate_rate_matches_reject_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"horizon": 80, "n_reps": 8, "methods": ["vs-dr-kte", "aw-aipw-constant"], "policy": {"kind": "uniform"}}"#,
    );
    let out_dir = dir.path().join("out");
    let v = stdout_json(&akte(&["calibrate", &cfg, "-o", out_dir.to_str().unwrap(), "--seed", "9"]));
    assert_eq!(v[0]["master_seed"], 9);
    let mut rdr = csv::Reader::from_path(out_dir.join("stats_0.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    for m in v[0]["methods"].as_array().unwrap() {
        let name = m["method"].as_str().unwrap();
        let flags: Vec<bool> = rows.iter().filter(|r| &r[2] == name).map(|r| &r[5] == "1").collect();
        assert_eq!(flags.len(), 8);
        let rate = flags.iter().filter(|&&b| b).count() as f64 / 8.0;
        assert_eq!(m["reject_rate"].as_f64().unwrap(), rate);
    }
}

#[test]
fn seed_env_var_overrides_master_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"horizon": 60, "n_reps": 3, "master_seed": 1}"#);
    let out = Command::new(env!("CARGO_BIN_EXE_akte"))
        .args(["calibrate", &cfg])
        .env("AKTE_MASTER_SEED", "424242")
        .output()
        .unwrap();
    assert_eq!(stdout_json(&out)[0]["master_seed"], 424242);
}

#[test]
fn reproduce_fig2_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("fig2");
    let out = akte(&["reproduce", "fig2", "--reps", "4", "-T", "80", "-o", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["hist.csv", "qq.csv", "summary.json"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let qq = std::fs::read_to_string(out_dir.join("qq.csv")).unwrap();
    assert_eq!(qq.lines().count(), 5);
}

#[test]
fn power_table_has_contract_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "power.json",
        r#"{"experiment": {"n_reps": 3, "methods": ["vs-dr-kte"], "policy": {"kind": "uniform"}}, "scenarios": ["I", "II"], "horizons": [60, 90]}"#,
    );
    let out = akte(&["power", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "method,scenario,T,n_reps,reject_rate,stderr,ks,mean_stat,var_stat");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[3].starts_with("vs-dr-kte,II-cosine,90,3,"));
}
