use std::fs;
use std::path::Path;

use climashift::emulator::{EmulatorKind, OptimizerKind, TrainConfig};
use climashift::harness::{
    cmd_eval, cmd_experiment, cmd_generate, cmd_report, cmd_split, cmd_train, repeat_runs, CellFilter,
    ExperimentConfig, HarnessError, ProtocolSet, RunOptions,
};

fn quick_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    cfg.train.insert(
        "mlp".into(),
        TrainConfig {
            epochs: 2,
            hidden_width: 8,
            ..TrainConfig::default()
        },
    );
    cfg
}

fn generate_opts(jobs: usize) -> RunOptions {
    RunOptions {
        jobs,
        generate: true,
        ..RunOptions::default()
    }
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn default_config_is_valid_and_roundtrips() {
    let cfg = ExperimentConfig::default();
    cfg.validate().unwrap();
    let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);
    let minimal = ExperimentConfig::from_json("{}").unwrap();
    assert_eq!(minimal, cfg);
}

#[test]
fn config_errors_name_the_field() {
    let err = ExperimentConfig::from_json(r#"{"train": {"mlp": {"epochs": "many"}}}"#).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("train.mlp.epochs"), "{err}");

    let err = ExperimentConfig::from_json(r#"{"sed": 4}"#).unwrap_err();
    assert!(err.to_string().contains("sed"), "{err}");

    let err = ExperimentConfig::from_json(r#"{"train": {"mlp": {"epochs": 0}}}"#).unwrap_err();
    assert!(err.to_string().contains("train.mlp"), "{err}");

    let err = ExperimentConfig::from_json(r#"{"train": {"gp": {}}}"#).unwrap_err();
    assert!(err.to_string().contains("train.gp"), "{err}");

    let err = ExperimentConfig::from_json(r#"{"output_dir": ""}"#).unwrap_err();
    assert!(err.to_string().contains("output_dir"), "{err}");
}

#[test]
fn missing_ssp245_with_baseline_is_a_config_error() {
    let mut cfg = ExperimentConfig::default();
    cfg.generation.scenarios.retain(|s| s.id.as_str() != "ssp245");
    cfg.protocols = vec![ProtocolSet::Baseline];
    let err = cfg.validate().unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)));
    let msg = err.to_string();
    assert!(msg.contains("baseline") && msg.contains("ssp245"), "{msg}");
}

#[test]
fn protocol_lists_parse() {
    assert_eq!(
        ProtocolSet::parse_list("baseline, ssp_rotation").unwrap(),
        vec![ProtocolSet::Baseline, ProtocolSet::SspRotation]
    );
    assert!(ProtocolSet::parse_list("baseline,ood").is_err());
    assert!(ProtocolSet::parse_list("").is_err());
}

#[test]
fn generate_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(4);
    let a = cmd_generate(&cfg, dir.path()).unwrap();
    let first = read(&dir.path().join("dataset/manifest.json"));
    let b = cmd_generate(&cfg, dir.path()).unwrap();
    assert_eq!(a.artifacts, b.artifacts);
    assert_eq!(first, read(&dir.path().join("dataset/manifest.json")));
    // 5 oracles x 5 scenarios x (inputs, outputs) + manifest.
    assert_eq!(a.artifacts.len(), 51);
    let on_disk: serde_json::Value =
        serde_json::from_slice(&read(&dir.path().join("run-generate.json"))).unwrap();
    assert_eq!(on_disk["command"], "generate");
}

#[test]
fn staged_commands_match_the_one_shot_experiment() {
    let staged = tempfile::tempdir().unwrap();
    let oneshot = tempfile::tempdir().unwrap();
    let cfg = quick_config(9);

    cmd_generate(&cfg, staged.path()).unwrap();
    let split = cmd_split(&cfg, staged.path()).unwrap();
    assert_eq!(split.artifacts.len(), 5);
    let trained = cmd_train(&cfg, staged.path(), &RunOptions::default()).unwrap();
    assert!(trained.failures.is_empty());
    assert_eq!(trained.manifest.artifacts.len(), 75);
    let evaluated = cmd_eval(&cfg, staged.path(), &RunOptions::default()).unwrap();
    assert_eq!(evaluated.records.len(), 150);

    let full = cmd_experiment(&cfg, oneshot.path(), &generate_opts(3)).unwrap();
    assert_eq!(full.exit_code(), 0);
    for file in ["results/records.csv", "results/table.csv", "results/table.md", "splits/baseline.json"] {
        assert_eq!(read(&staged.path().join(file)), read(&oneshot.path().join(file)), "{file}");
    }
    let model = "models/time_shift/mlp/oracle_c.json";
    assert_eq!(read(&staged.path().join(model)), read(&oneshot.path().join(model)));
}

#[test]
fn worker_count_does_not_change_results() {
    let one = tempfile::tempdir().unwrap();
    let many = tempfile::tempdir().unwrap();
    let mut cfg = quick_config(2);
    cfg.protocols = vec![ProtocolSet::Baseline, ProtocolSet::TimeShift];
    cmd_experiment(&cfg, one.path(), &generate_opts(1)).unwrap();
    cmd_experiment(&cfg, many.path(), &generate_opts(4)).unwrap();
    assert_eq!(
        read(&one.path().join("results/records.csv")),
        read(&many.path().join("results/records.csv"))
    );
}

#[test]
fn experiment_without_dataset_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_experiment(&quick_config(1), dir.path(), &RunOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("generate"), "{err}");
}

#[test]
fn mismatched_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(1);
    cmd_generate(&cfg, dir.path()).unwrap();
    let mut other = cfg.clone();
    other.generation.grid.n_lon = 6;
    let err = cmd_split(&other, dir.path()).unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)), "{err}");
}

#[test]
fn diverging_cells_are_recorded_and_the_rest_continue() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_config(5);
    cfg.protocols = vec![ProtocolSet::Baseline, ProtocolSet::TimeShift];
    cfg.train.insert(
        "mlp".into(),
        TrainConfig {
            epochs: 2,
            hidden_width: 4,
            optimizer: OptimizerKind::Sgd,
            lr_init: 1e150,
            ..TrainConfig::default()
        },
    );
    let out = cmd_experiment(&cfg, dir.path(), &generate_opts(2)).unwrap();
    assert_eq!(out.exit_code(), 3);
    assert_eq!(out.failures.len(), 10);
    assert!(out.failures.iter().all(|f| f.emulator == EmulatorKind::Mlp));
    assert!(out.failures[0].error.contains("epoch 0"), "{}", out.failures[0].error);
    // Two closed-form kinds x 5 oracles x 2 plans x 2 variables.
    assert_eq!(out.records.len(), 40);
    let failures: serde_json::Value =
        serde_json::from_slice(&read(&dir.path().join("results/failures.json"))).unwrap();
    assert_eq!(failures.as_array().unwrap().len(), 10);
    assert!(dir.path().join("results/table.csv").exists());

    let report = cmd_report(dir.path(), 20.0).unwrap();
    assert!(report.missing.is_empty(), "mlp rows are absent, not partially filled");
    assert!(!report.text.contains("mlp"));
}

#[test]
fn filtered_training_writes_only_matching_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(6);
    cmd_generate(&cfg, dir.path()).unwrap();
    let opts = RunOptions {
        filter: CellFilter {
            emulator: Some(EmulatorKind::PatternScaling),
            oracle: Some("oracle_b".into()),
            plan: None,
        },
        ..RunOptions::default()
    };
    let out = cmd_train(&cfg, dir.path(), &opts).unwrap();
    assert_eq!(out.manifest.artifacts.len(), 5);
    assert!(out.manifest.artifacts.keys().all(|k| k.contains("pattern_scaling") && k.ends_with("oracle_b.json")));

    let none = RunOptions {
        filter: CellFilter {
            oracle: Some("oracle_z".into()),
            ..CellFilter::default()
        },
        ..RunOptions::default()
    };
    assert!(matches!(cmd_train(&cfg, dir.path(), &none), Err(HarnessError::Config(_))));

    // Evaluating everything reports the untrained cells as failures.
    let eval = cmd_eval(&cfg, dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(eval.records.len(), 10);
    assert_eq!(eval.failures.len(), 70);
    assert_eq!(eval.exit_code(), 3);
}

const FLAG_RECORDS: &str = "emulator,oracle,protocol,variable,rmse,n_forecasts
climatology,oracle_a,baseline,TAS,2.0,12
climatology,oracle_a,time_shift,TAS,2.5,12
climatology,oracle_a,ssp_holdout_ssp126,TAS,2.1,12
";

#[test]
fn report_flags_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("results")).unwrap();
    fs::write(dir.path().join("results/records.csv"), FLAG_RECORDS).unwrap();
    let r = cmd_report(dir.path(), 20.0).unwrap();
    assert_eq!(r.flagged, vec!["climatology/TAS/oracle_a/time_shift: +25.00%".to_string()]);
    let first = read(&dir.path().join("results/report.md"));
    let again = cmd_report(dir.path(), 20.0).unwrap();
    assert_eq!(r, again);
    assert_eq!(first, read(&dir.path().join("results/report.md")));
    assert!(cmd_report(dir.path(), 30.0).unwrap().flagged.is_empty());
}

#[test]
fn report_rejects_missing_empty_and_corrupt_records() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cmd_report(dir.path(), 20.0).unwrap_err().exit_code(), 2);
    fs::create_dir_all(dir.path().join("results")).unwrap();
    let path = dir.path().join("results/records.csv");
    fs::write(&path, "").unwrap();
    assert_eq!(cmd_report(dir.path(), 20.0).unwrap_err().exit_code(), 2);
    fs::write(&path, "emulator,oracle,protocol,variable,rmse,n_forecasts\n").unwrap();
    assert_eq!(cmd_report(dir.path(), 20.0).unwrap_err().exit_code(), 2);
    fs::write(&path, "emulator,oracle,protocol,variable,rmse,n_forecasts\nmlp,o,baseline,TAS,abc,3\n").unwrap();
    assert_eq!(cmd_report(dir.path(), 20.0).unwrap_err().exit_code(), 2);
}

#[test]
fn repeats_use_consecutive_seeds_in_separate_directories() {
    let cfg = quick_config(10);
    let single = repeat_runs(&cfg, Path::new("/tmp/x"), 1);
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].1, Path::new("/tmp/x"));
    let runs = repeat_runs(&cfg, Path::new("/tmp/x"), 3);
    let seeds: Vec<u64> = runs.iter().map(|(c, _)| c.seed).collect();
    assert_eq!(seeds, vec![10, 11, 12]);
    assert_eq!(runs[2].1, Path::new("/tmp/x/seed-12"));
}
