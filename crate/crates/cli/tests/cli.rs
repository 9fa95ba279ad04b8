use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn modeswitch(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modeswitch"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn modeswitch")
}

fn stdout_json(o: &Output) -> serde_json::Value {
    let s = String::from_utf8_lossy(&o.stdout);
    assert_eq!(s.lines().count(), 1, "{s}");
    serde_json::from_str(s.trim()).unwrap()
}

fn stderr_error(o: &Output) -> serde_json::Value {
    assert!(!o.status.success());
    let s = String::from_utf8_lossy(&o.stderr);
    let line = s.lines().last().expect("stderr empty");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not json: {s}"))
}

#[test]
fn trace_writes_csv_and_reports_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = modeswitch(&["trace", "--seed", "3"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["command"], "trace");
    assert_eq!(v["seed"], 3);
    assert_eq!(v["config_sha256"].as_str().unwrap().len(), 64);
    let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(csv.starts_with("# config_sha256="));
    assert!(csv.contains("slot,mode,action,reward,argmax_intention,cause"));
}

#[test]
fn sweep_loss_honours_config_and_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "seed = 11\n[sweep]\nloss_grid = [0.001, 0.2]\n").unwrap();
    let o = modeswitch(&["sweep-loss", "--config", cfg.to_str().unwrap(), "--episodes", "200", "--workers", "1"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["rows"], 2);
    let text = fs::read_to_string(dir.path().join("sweep_loss.csv")).unwrap();
    assert!(text.contains("# seed=11"));
    let data: Vec<_> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data.len(), 3);
    assert!(data[1].ends_with(",200"), "{}", data[1]);
}

#[test]
fn sweep_pt_warns_on_unreachable_targets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[sweep]\npt_grid = [0.33, 1.0]\nrho_grid = [0.85]\n").unwrap();
    let o = modeswitch(&["sweep-pt", "--config", cfg.to_str().unwrap(), "--episodes", "100"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("\"warning\"") && err.contains("0.33"), "{err}");
    assert!(dir.path().join("sweep_pt.csv").exists());
}

#[test]
fn missing_dataset_is_a_one_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = modeswitch(&["train-intent"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let v = stderr_error(&o);
    assert_eq!(v["error"], "train-intent");
    assert!(v["message"].as_str().unwrap().contains("dataset"));
}

#[test]
fn bad_config_and_bad_usage_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[task]\nunknown_key = 1\n").unwrap();
    let o = modeswitch(&["sweep-pt", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(stderr_error(&o)["error"], "sweep-pt");

    let o = modeswitch(&["no-such-command"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["error"], "usage");

    let o = modeswitch(&["trace", "--seed", "minus-one"], dir.path());
    assert_eq!(stderr_error(&o)["error"], "usage");
}

#[test]
fn gen_data_writes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[data]\nn_per_class = 10\n").unwrap();
    let o = modeswitch(&["gen-data", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["trajectories"], 40);
    assert!(dir.path().join("dataset.bin").exists());
}
