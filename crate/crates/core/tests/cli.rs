use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn climashift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_climashift"))
        .args(args)
        .env("CLIMASHIFT_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const QUICK: &str = r#"{
  "seed": 21,
  "protocols": ["baseline", "time_shift"],
  "train": {"mlp": {"epochs": 2, "hidden_width": 6}}
}"#;

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&climashift(&["--help"])), 0);
    assert_eq!(code(&climashift(&["frobnicate"])), 1);
    assert_eq!(code(&climashift(&["experiment", "--jobs", "many"])), 1);
}

#[test]
fn invalid_config_exits_1_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"protocols": ["baseline"], "report_threshold": "high"}"#);
    let out = climashift(&["generate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("report_threshold"), "{}", stderr(&out));

    let out = climashift(&["generate", "--protocols", "baseline,sideways", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&climashift(&["experiment", "--out", d])), 2);
    assert_eq!(code(&climashift(&["report", "--out", d])), 2);
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&climashift(&["split", "--config", missing.to_str().unwrap()])), 2);
}

#[test]
fn pipeline_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK);
    let run = dir.path().join("run");
    let r = run.to_str().unwrap();

    let gen = climashift(&["generate", "--config", &cfg, "--out", r]);
    assert_eq!(code(&gen), 0, "{}", stderr(&gen));
    let exp = climashift(&["experiment", "--config", &cfg, "--out", r, "--jobs", "2"]);
    assert_eq!(code(&exp), 0, "{}", stderr(&exp));
    assert!(String::from_utf8_lossy(&exp.stdout).contains("60 records, 0 failed"));
    assert!(stderr(&exp).is_empty(), "log level error hides info lines: {}", stderr(&exp));

    let rep = climashift(&["report", "--out", r, "--threshold", "20"]);
    assert_eq!(code(&rep), 0);
    let text = String::from_utf8_lossy(&rep.stdout);
    assert!(text.starts_with("emulator"));
    assert!(text.contains("oracle_e/time_shift"));
    assert!(run.join("results/report.md").exists());

    // The seed flag overrides the config and changes the split plans.
    let other = dir.path().join("other");
    let o = other.to_str().unwrap();
    let exp2 = climashift(&["experiment", "--config", &cfg, "--out", o, "--seed", "22", "--generate"]);
    assert_eq!(code(&exp2), 0);
    assert_ne!(
        fs::read(run.join("splits/baseline.json")).unwrap(),
        fs::read(other.join("splits/baseline.json")).unwrap()
    );
}

#[test]
fn repeat_writes_one_directory_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"seed": 5, "protocols": ["baseline"], "emulators": ["climatology"]}"#,
    );
    let d = dir.path().join("rep");
    let out = climashift(&["experiment", "--config", &cfg, "--out", d.to_str().unwrap(), "--generate", "--repeat", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for s in ["seed-5", "seed-6"] {
        assert!(d.join(s).join("results/records.csv").exists(), "{s}");
    }
}
