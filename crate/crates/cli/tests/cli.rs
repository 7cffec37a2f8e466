mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::{prices_from_returns, synthetic_returns, write_prices};
use qgaf_cli::pipeline::{archives_dir, read_archives, train_dir, MANIFEST_FILE, METRICS_FILE};
use qgaf_cli::{run_compare, run_encode, run_ingest, run_train, ComparisonReport, EncodeManifest, PipelineConfig};
use qgaf_core::windowing::labeled_windows;
use qgaf_core::FieldKind;
use serde_json::json;

fn qgaf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qgaf"))
}

fn write_config(dir: &Path, value: serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path
}

fn config(prices: &Path, out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::for_path(prices);
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn ingest_three_prices_gives_two_returns() {
    let dir = tempfile::tempdir().unwrap();
    let prices = write_prices(dir.path(), "p.csv", &[Some(100.0), Some(110.0), Some(99.0)]);
    let summary = run_ingest(&config(&prices, dir.path())).unwrap();
    assert_eq!(summary.return_rows, 2);
    let csv = fs::read_to_string(dir.path().join("returns.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "date,return");
    assert_eq!(lines.len(), 3);
    let r: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((r - 0.1).abs() < 1e-12);
    let r: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
    assert!((r - (-0.1)).abs() < 1e-12);
    assert!(dir.path().join("ingest.json").exists());
}

#[test]
fn ingest_reports_one_fill() {
    let dir = tempfile::tempdir().unwrap();
    let prices = write_prices(dir.path(), "p.csv", &[Some(100.0), None, Some(102.0), Some(101.0)]);
    let summary = run_ingest(&config(&prices, dir.path())).unwrap();
    assert_eq!(summary.filled, 1);
    assert_eq!(summary.missing, 1);
    assert_eq!(summary.return_rows, 3);
    let on_disk: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ingest.json")).unwrap()).unwrap();
    assert_eq!(on_disk["filled"], 1);
    assert_eq!(on_disk["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn unreadable_source_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({"source": {"path": dir.path().join("missing.csv")}}));
    let out = qgaf().args(["ingest", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing.csv"), "{stderr}");
}

#[test]
fn malformed_price_row_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("bad.csv");
    fs::write(&prices, "date,close\n2024-01-02,100\n2024-01-03,abc\n").unwrap();
    let err = run_ingest(&config(&prices, dir.path())).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let msg = err.to_string();
    assert!(msg.contains("bad.csv") && msg.contains("line 3"), "{msg}");
}

#[test]
fn encode_2000_returns_gives_198_archives() {
    let dir = tempfile::tempdir().unwrap();
    let prices = write_prices(dir.path(), "synth.csv", &prices_from_returns(&synthetic_returns(2000, 1)));
    let cfg = config(&prices, dir.path()).with_encoder(FieldKind::Gasf);
    let manifest = run_encode(&cfg).unwrap();
    assert_eq!(manifest.count, 198);
    assert!(manifest.skipped.is_empty());
    let archive_dir = archives_dir(&cfg, FieldKind::Gasf);
    let files = fs::read_dir(&archive_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "qgaf"))
        .count();
    assert_eq!(files, 198);
    assert!(archive_dir.join("win_0.qgaf").exists());
    assert!(archive_dir.join("win_1970.qgaf").exists());

    let on_disk: EncodeManifest = serde_json::from_str(&fs::read_to_string(archive_dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk, manifest);
    assert_eq!(on_disk.seed, 0);
    assert_eq!(on_disk.encoder, FieldKind::Gasf);
    let archives = read_archives(&archive_dir, 30).unwrap();
    assert!(archives.iter().all(|(a, _)| a.provenance.as_ref().unwrap().config_hash == cfg.hash()));
}

#[test]
fn exact_flag_gives_cos_sum_of_raw_windows() {
    let dir = tempfile::tempdir().unwrap();
    let returns = synthetic_returns(120, 2);
    let prices = write_prices(dir.path(), "p.csv", &prices_from_returns(&returns));
    let cfg_path = write_config(dir.path(), json!({"source": {"path": prices}}));
    let status = qgaf()
        .args(["encode", "--encoder", "qgasf", "--exact", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());

    let archives = read_archives(&dir.path().join("archives/qgasf"), 30).unwrap();
    let ingested = qgaf_cli::pipeline::load_returns(&config(&prices, dir.path())).unwrap().returns.returns;
    let windows = labeled_windows(&ingested, &Default::default()).unwrap();
    assert_eq!(archives.len(), windows.len());
    for ((a, _), w) in archives.iter().zip(&windows) {
        assert_eq!(a.field.source_window_start, w.start_index);
        for i in 0..30 {
            for j in 0..30 {
                let expect = (w.values[i] + w.values[j]).cos();
                // archives store f32
                assert!((a.field.get(i, j) - expect).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn degenerate_window_is_skipped_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let mut returns = vec![0.0; 30];
    returns.extend(synthetic_returns(30, 3));
    let prices = write_prices(dir.path(), "flat.csv", &prices_from_returns(&returns));
    let cfg = config(&prices, dir.path()).with_encoder(FieldKind::Gasf);
    let manifest = run_encode(&cfg).unwrap();
    assert_eq!(manifest.windows_total, 4);
    assert_eq!(manifest.count, 3);
    assert_eq!(manifest.skipped.len(), 1);
    assert_eq!(manifest.skipped[0].start_index, 0);
    assert!(!archives_dir(&cfg, FieldKind::Gasf).join("win_0.qgaf").exists());

    // QGASF has no normalization step, so it keeps the flat window and the
    // two encoders no longer see the same data.
    let err = run_compare(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("refusing to compare"), "{err}");
}

#[test]
fn train_on_empty_directory_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let cfg = write_config(dir.path(), json!({"source": {"path": "unused.csv"}}));
    let out = qgaf().args(["train", "--config"]).arg(&cfg).arg("--archives").arg(&empty).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no .qgaf archives"));
}

#[test]
fn hundred_archives_train_in_folds_of_twenty_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let prices = write_prices(dir.path(), "p.csv", &prices_from_returns(&synthetic_returns(1020, 4)));
    let mut cfg = config(&prices, dir.path()).with_encoder(FieldKind::Gasf);
    cfg.train.epochs = 2;
    assert_eq!(run_encode(&cfg).unwrap().count, 100);
    let summary = run_train(&cfg, None).unwrap();
    assert_eq!(summary.folds.len(), 5);
    for f in &summary.folds {
        assert_eq!((f.train_size, f.val_size), (80, 20));
    }
    let out = train_dir(&cfg, FieldKind::Gasf);
    for k in 0..5 {
        let csv = fs::read_to_string(out.join(format!("fold_{k}.csv"))).unwrap();
        assert!(csv.starts_with("epoch,train_loss,val_loss\n"));
        assert_eq!(csv.lines().count(), 3);
        assert!(out.join(format!("fold_{k}.ckpt")).exists());
    }
    let first = fs::read(out.join(METRICS_FILE)).unwrap();
    run_train(&cfg, None).unwrap();
    assert_eq!(fs::read(out.join(METRICS_FILE)).unwrap(), first);
}

#[test]
fn compare_writes_tables_curves_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let prices = write_prices(dir.path(), "SYN.csv", &prices_from_returns(&synthetic_returns(520, 5)));
    let mut cfg = config(&prices, dir.path());
    cfg.train.epochs = 3;
    let report = run_compare(&cfg).unwrap();
    let stock = &report.stocks[0];
    assert_eq!(stock.name, "SYN");
    assert_eq!((stock.baseline.encoder, stock.candidate.encoder), (FieldKind::Gasf, FieldKind::Qgasf));
    assert!(stock.reduction.mae_pct.unwrap().is_finite());
    let cmp = dir.path().join("compare");
    for file in ["report.json", "table.csv", "table.md", "reductions.csv", "curves_gasf.csv", "curves_qgasf.csv", "loss_train.svg", "loss_val.svg"] {
        assert!(cmp.join(file).exists(), "{file}");
    }
    let table = fs::read_to_string(cmp.join("table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "model,SYN MAE,SYN MSE");
    assert!(fs::read_to_string(cmp.join("loss_val.svg")).unwrap().contains(&cfg.hash()));

    let merged_dir = dir.path().join("merged");
    let out = qgaf()
        .args(["report", "--out"])
        .arg(&merged_dir)
        .arg("--merge")
        .arg(cmp.join("report.json"))
        .arg(cmp.join("report.json"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let merged: ComparisonReport = serde_json::from_str(&fs::read_to_string(merged_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(merged.stocks.len(), 2);
}

#[test]
fn check_config_validates() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), json!({"source": {"path": "p.csv"}, "encoder": "gadf", "seed": 3}));
    let out = qgaf().args(["report", "--check-config", "--config"]).arg(&good).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("config_hash") && stdout.contains("\"gadf\""));

    let bad = write_config(dir.path(), json!({"source": {"path": "p.csv"}, "window": {"window_size": 1}}));
    let out = qgaf().args(["report", "--check-config", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let example = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/example-config.json");
    let out = qgaf().args(["report", "--check-config", "--config"]).arg(&example).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
