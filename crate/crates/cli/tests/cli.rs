use std::fs;
use std::path::PathBuf;
use std::process::Command;

use swiftnet_cli::parse_config;
use swiftnet_core::data::synthetic::write_cifar_dir;
use swiftnet_core::harness::{
    manifest_path, read_manifest, read_metrics, OptimizerKind, Recipe, IP_LAMBDA, IP_SMOOTHING,
};

#[test]
fn sam_ip_flags_select_the_recipe() {
    let inv = parse_config(["swiftnet", "--optimizer", "sam", "--ip"], None).unwrap();
    let c = &inv.config;
    assert_eq!(c.optimizer, OptimizerKind::Sam);
    assert!(c.ip && !c.gc && !c.mltp);
    assert_eq!(c.recipe_tag(), "sam+ip");
    assert_eq!((c.smoothing(), c.weight_decay()), (IP_SMOOTHING, IP_LAMBDA));
    assert!(inv.recipes.is_none());
}

#[test]
fn env_supplies_data_dir_when_nothing_else_does() {
    let inv = parse_config(["swiftnet"], Some("/data/cifar".into())).unwrap();
    assert_eq!(inv.config.data_dir, PathBuf::from("/data/cifar"));
    assert_eq!(inv.config.per_class, 500);
    assert_eq!(inv.config.budget_seconds, 600.0);
    assert_eq!(inv.config.max_epochs, 200);

    let inv = parse_config(["swiftnet", "--data-dir", "/flag"], Some("/env".into())).unwrap();
    assert_eq!(inv.config.data_dir, PathBuf::from("/flag"));
}

#[test]
fn flag_beats_file_and_both_are_kept() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.cfg");
    fs::write(&file, "lr_peak = 0.2\nseed = 7\n").unwrap();
    let inv = parse_config(
        ["swiftnet", "--config", file.to_str().unwrap(), "--lr-peak", "0.3"],
        None,
    )
    .unwrap();
    assert_eq!(inv.config.lr_peak, 0.3);
    assert_eq!(inv.config.seed, 7);
    assert_eq!(inv.sources.file["lr_peak"], "0.2");
    assert_eq!(inv.sources.cli["lr_peak"], "0.3");
    assert_eq!(inv.sources.file_path.as_deref(), Some(file.as_path()));
}

#[test]
fn bad_invocations_are_errors() {
    assert!(parse_config(["swiftnet", "--no-such-flag"], None).is_err());
    assert!(parse_config(["swiftnet", "--config", "/nonexistent/run.cfg"], None).is_err());
    assert!(parse_config(["swiftnet", "--budget-seconds", "0"], None).is_err());
    assert!(parse_config(["swiftnet", "--precision", "16"], None).is_err());
    assert!(parse_config(["swiftnet", "--recipe-matrix", "baseline,adam"], None).is_err());
}

#[test]
fn recipe_matrix_lists() {
    let all = parse_config(["swiftnet", "--recipe-matrix"], None).unwrap();
    assert_eq!(all.recipes.unwrap(), Recipe::ALL.to_vec());
    let two = parse_config(["swiftnet", "--recipe-matrix", "baseline,sam+ip"], None).unwrap();
    assert_eq!(two.recipes.unwrap(), vec![Recipe::Baseline, Recipe::SamIp]);
}

fn tiny_run_args(data: &std::path::Path, out: &std::path::Path) -> Vec<String> {
    [
        "--per-class",
        "4",
        "--test-per-class",
        "2",
        "--max-epochs",
        "1",
        "--batch-size",
        "20",
        "--width-divisor",
        "16",
        "--budget-seconds",
        "300",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([
        "--data-dir".into(),
        data.display().to_string(),
        "--metrics-out".into(),
        out.display().to_string(),
    ])
    .collect()
}

#[test]
fn binary_writes_metrics_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_cifar_dir(&data, 10, 20, 3).unwrap();
    let out = dir.path().join("runs/m.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_swiftnet"))
        .args(tiny_run_args(&data, &out))
        .env_remove("CIFAR_DIR")
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success());
    let records = read_metrics(&out).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].recipe, "baseline");
    let m = read_manifest(&manifest_path(&out)).unwrap();
    assert_eq!(m.sources.cli["per_class"], "4");
    assert_eq!(m.train_size, 40);
}

#[test]
fn binary_recipe_matrix_reports_each_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_cifar_dir(&data, 10, 20, 3).unwrap();
    let out = dir.path().join("m.csv");
    let output = Command::new(env!("CARGO_BIN_EXE_swiftnet"))
        .args(tiny_run_args(&data, &out))
        .args(["--recipe-matrix", "baseline,sam", "--whitening-patches", "1000"])
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let table = fs::read_to_string(dir.path().join("m.summary.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("baseline,ok,"));
    assert!(rows[2].starts_with("sam,ok,"));
    assert!(dir.path().join("m.sam.csv").exists());
}

#[test]
fn missing_data_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_swiftnet"))
        .args(tiny_run_args(&dir.path().join("absent"), &dir.path().join("m.csv")))
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("data_batch_1.bin"));
}
