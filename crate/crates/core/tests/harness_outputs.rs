use std::path::Path;
use std::process::Command;

use batchts::batching::ScheduleSpec;
use batchts::env::ArmKind;
use batchts::harness::config::CheckpointGrid;
use batchts::harness::output::{
    mean_se, Metadata, AGGREGATE_FILE, CSV_HEADER, METADATA_FILE, REPLICATES_FILE,
};
use batchts::harness::{
    audit_ipase, compare_runs, load_result, run_experiment, ExperimentConfig, HarnessError,
};

fn config(schedule: ScheduleSpec, horizon: u64, replicates: u64) -> ExperimentConfig {
    ExperimentConfig {
        arms: vec![ArmKind::Bernoulli { p: 0.9 }, ArmKind::Bernoulli { p: 0.1 }],
        algorithm: Default::default(),
        schedule,
        horizon,
        replicates,
        master_seed: 99,
        checkpoints: CheckpointGrid::default(),
        prob_method: Default::default(),
        output: None,
        workers: Some(2),
    }
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn emitted_files_have_the_documented_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        output: Some(tmp.path().to_path_buf()),
        ..config(ScheduleSpec::Ipase, 2000, 5)
    };
    let result = run_experiment(&cfg).unwrap();
    let csv = read(tmp.path(), AGGREGATE_FILE);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(lines.count(), result.rows.len());
    let meta: Metadata = serde_json::from_str(&read(tmp.path(), METADATA_FILE)).unwrap();
    assert_eq!(meta.log_base, "e");
    assert_eq!(meta.config_hash, cfg.hash());
    assert!(meta.standard_errors);
    assert!(meta.config.output.is_none() && meta.config.workers.is_none());

    let loaded = load_result(tmp.path()).unwrap();
    assert_eq!(loaded.rows, result.rows);
    assert_eq!(loaded.summary, result.summary);
    assert_eq!(loaded.replicates, result.replicates);
}

#[test]
fn metadata_config_reruns_to_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let cfg = ExperimentConfig {
        prob_method: "monte-carlo:5000".parse().unwrap(),
        output: Some(first.clone()),
        ..config(ScheduleSpec::Ipase, 3000, 3)
    };
    run_experiment(&cfg).unwrap();
    let meta: Metadata = serde_json::from_str(&read(&first, METADATA_FILE)).unwrap();
    let second = tmp.path().join("second");
    let rerun = ExperimentConfig {
        output: Some(second.clone()),
        ..meta.config
    };
    run_experiment(&rerun).unwrap();
    for f in [AGGREGATE_FILE, REPLICATES_FILE, METADATA_FILE] {
        assert_eq!(read(&first, f), read(&second, f), "{f} differs");
    }
}

#[test]
fn single_replicate_leaves_standard_errors_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        output: Some(tmp.path().to_path_buf()),
        ..config(ScheduleSpec::PerStep, 50, 1)
    };
    let result = run_experiment(&cfg).unwrap();
    assert!(!result.metadata.standard_errors);
    for line in read(tmp.path(), AGGREGATE_FILE).lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 7);
        assert!(
            fields[2].is_empty() && fields[4].is_empty() && fields[6].is_empty(),
            "{line}"
        );
    }
}

#[test]
fn empty_checkpoint_grid_writes_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        checkpoints: CheckpointGrid::Explicit { points: vec![] },
        output: Some(tmp.path().to_path_buf()),
        ..config(ScheduleSpec::PerStep, 100, 2)
    };
    run_experiment(&cfg).unwrap();
    assert_eq!(
        read(tmp.path(), AGGREGATE_FILE),
        format!("{}\n", CSV_HEADER.join(","))
    );
}

#[test]
fn aggregate_columns_are_plain_means() {
    let result = run_experiment(&config(ScheduleSpec::Polynomial { p: 2.0 }, 5000, 7)).unwrap();
    for (i, row) in result.rows.iter().enumerate() {
        let regrets: Vec<f64> = result
            .replicates
            .iter()
            .map(|r| r.rows[i].random_regret)
            .collect();
        let mut sum = 0.0;
        for r in &regrets {
            sum += r;
        }
        assert_eq!(row.mean_random_regret, sum / regrets.len() as f64);
        assert_eq!(mean_se(&regrets).1, row.se_random_regret);
        let batches: Vec<f64> = result
            .replicates
            .iter()
            .map(|r| r.rows[i].batches as f64)
            .collect();
        assert_eq!(
            row.mean_batches,
            batches.iter().sum::<f64>() / batches.len() as f64
        );
    }
}

#[test]
fn per_step_runs_close_one_batch_per_step() {
    let result = run_experiment(&config(ScheduleSpec::PerStep, 3000, 2)).unwrap();
    for r in &result.replicates {
        assert_eq!(r.final_state.batch_count, 3000);
    }
    assert!(audit_ipase(&result).is_none());
}

#[test]
fn self_comparison_has_unit_ratio_and_mismatches_are_rejected() {
    let a = run_experiment(&config(ScheduleSpec::Ipase, 4000, 4)).unwrap();
    let cmp = compare_runs(&[a.clone(), a.clone()]).unwrap();
    assert!(cmp.rows.iter().all(|r| r.regret_ratio == vec![1.0, 1.0]));
    let csv = cmp.to_csv().unwrap();
    assert_eq!(csv.lines().count(), cmp.rows.len() + 1);

    let b = run_experiment(&config(ScheduleSpec::Ipase, 5000, 4)).unwrap();
    assert!(matches!(
        compare_runs(&[a, b]),
        Err(HarnessError::Mismatch(_))
    ));
}

#[test]
fn ipase_audit_finds_no_violations() {
    for method in ["closed-form", "monte-carlo:20000"] {
        let cfg = ExperimentConfig {
            prob_method: method.parse().unwrap(),
            ..config(ScheduleSpec::Ipase, 50_000, 6)
        };
        let result = run_experiment(&cfg).unwrap();
        let audit = audit_ipase(&result).unwrap();
        assert!(audit.checked > 6 * 10, "{method}: {}", audit.checked);
        assert!(
            audit.violations.is_empty(),
            "{method}: {:?}",
            audit.violations
        );
    }
}

#[test]
fn three_arm_quadrature_ipase_audit() {
    let cfg = ExperimentConfig {
        arms: vec![
            ArmKind::Gaussian {
                mean: 0.5,
                variance: 1.0,
            },
            ArmKind::Gaussian {
                mean: 0.0,
                variance: 1.0,
            },
            ArmKind::Gaussian {
                mean: -0.5,
                variance: 1.0,
            },
        ],
        ..config(ScheduleSpec::Ipase, 20_000, 3)
    };
    let result = run_experiment(&cfg).unwrap();
    let audit = audit_ipase(&result).unwrap();
    assert!(audit.violations.is_empty(), "{:?}", audit.violations);
    assert_eq!(result.metadata.arm_labels, vec![1, 2, 3]);
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_batchts"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn cli_round_trip_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("cfg.json");
    let cfg = config(ScheduleSpec::Ipase, 1000, 2);
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let cfg_s = cfg_path.to_str().unwrap();

    let (code, stdout, _) = cli(&[
        "run",
        cfg_s,
        "--out",
        out_a.to_str().unwrap(),
        "--workers",
        "1",
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("mean batches"));
    let (code, _, _) = cli(&[
        "run",
        cfg_s,
        "--out",
        out_b.to_str().unwrap(),
        "--schedule",
        "per-step",
        "--arms",
        "bern:0.9,bern:0.1",
    ]);
    assert_eq!(code, 0);

    let (code, stdout, _) = cli(&["compare", out_a.to_str().unwrap(), out_b.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.contains("per-step"));
    let (code, stdout, _) = cli(&["diagnose", out_a.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.contains("ipase audit"));
    let (code, stdout, _) = cli(&[
        "validate-schedule",
        cfg_s,
        "--schedule",
        "geometric:2",
        "--horizon",
        "100000",
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("verdict: violating"));

    let (code, _, stderr) = cli(&["run", cfg_s, "--arms", "bern:0.5,bern:0.5"]);
    assert_eq!(code, 2, "{stderr}");
    let (code, _, _) = cli(&["diagnose", tmp.path().join("missing").to_str().unwrap()]);
    assert_eq!(code, 3);
    std::fs::write(out_b.join(REPLICATES_FILE), "[").unwrap();
    let (code, _, _) = cli(&["diagnose", out_b.to_str().unwrap()]);
    assert_eq!(code, 4);
    let short = tmp.path().join("short");
    let (code, _, _) = cli(&[
        "run",
        cfg_s,
        "--horizon",
        "500",
        "--out",
        short.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let (code, _, _) = cli(&["compare", out_a.to_str().unwrap(), short.to_str().unwrap()]);
    assert_eq!(code, 6);
}
