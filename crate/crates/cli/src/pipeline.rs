//! The ingest, encode and train stages.

use std::fs;
use std::path::{Path, PathBuf};

use qgaf_core::cnn::{cross_validate, prescale_fields, save_checkpoint, FoldMode, LossKind, Metrics, Sample};
use qgaf_core::gaf::encode_window;
use qgaf_core::imaging::{
    archive_file_name, field_to_gray, write_pgm, write_png, FieldArchive, Provenance, ValueRange, ARCHIVE_EXTENSION,
};
use qgaf_core::marketdata::{
    clean_with_report, daily_returns, fetch_csv_url, load_csv, CleanReport, CleaningPolicy, MarketDataError,
    ReturnSeries,
};
use qgaf_core::qgaf::{qgadf_image, qgasf_image};
use qgaf_core::windowing::{labeled_windows, LabelMode, LabeledWindow, WindowConfig};
use qgaf_core::{AngularField, FieldKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, PipelineConfig};
use crate::error::{CliError, Result};

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Removes files named `win_*.{ext}` left by an earlier run.
fn clear_stale(dir: &Path, extensions: &[&str]) -> Result<()> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(());
    };
    for entry in entries.flatten() {
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if name.starts_with("win_") && extensions.contains(&ext) {
            fs::remove_file(&path).map_err(|e| CliError::io(&path, e))?;
        }
    }
    Ok(())
}

pub fn archives_dir(cfg: &PipelineConfig, kind: FieldKind) -> PathBuf {
    cfg.output_dir.join("archives").join(kind.as_str())
}

pub fn images_dir(cfg: &PipelineConfig, kind: FieldKind) -> PathBuf {
    cfg.output_dir.join("images").join(kind.as_str())
}

pub fn train_dir(cfg: &PipelineConfig, kind: FieldKind) -> PathBuf {
    cfg.output_dir.join("train").join(kind.as_str())
}

pub struct LoadedSeries {
    pub price_rows: usize,
    pub missing: usize,
    pub cleaning: CleanReport,
    pub returns: ReturnSeries,
}

pub fn load_returns(cfg: &PipelineConfig) -> Result<LoadedSeries> {
    let src = &cfg.source;
    let (prices, origin) = match (&src.path, &src.url) {
        (Some(path), _) => (load_csv(path, &src.schema), path.display().to_string()),
        (None, Some(url)) => (fetch_csv_url(url, &src.schema), url.clone()),
        (None, None) => return Err(CliError::usage("no data source configured")),
    };
    let prices = prices.map_err(|e| match e {
        MarketDataError::Io { .. } => CliError::from(e),
        other => CliError::usage(format!("{origin}: {other}")),
    })?;
    let (clean, cleaning) = clean_with_report(&prices, cfg.cleaning).map_err(|e| CliError::usage(format!("{origin}: {e}")))?;
    let returns = daily_returns(&clean).map_err(|e| CliError::usage(format!("{origin}: {e}")))?;
    Ok(LoadedSeries {
        price_rows: prices.len(),
        missing: prices.missing_count(),
        cleaning,
        returns,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub config_hash: String,
    pub seed: u64,
    pub source: String,
    pub cleaning: CleaningPolicy,
    pub price_rows: usize,
    pub missing: usize,
    pub filled: usize,
    pub dropped_leading: usize,
    pub return_rows: usize,
    pub first_date: String,
    pub last_date: String,
}

/// Writes `returns.csv` and `ingest.json` under the output directory.
pub fn run_ingest(cfg: &PipelineConfig) -> Result<IngestSummary> {
    let loaded = load_returns(cfg)?;
    let r = &loaded.returns;
    let mut csv = String::from("date,return\n");
    for (d, v) in r.dates.iter().zip(&r.returns) {
        csv.push_str(&format!("{d},{v}\n"));
    }
    write_file(&cfg.output_dir.join("returns.csv"), csv)?;
    let summary = IngestSummary {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        source: cfg.source.display_name(),
        cleaning: cfg.cleaning,
        price_rows: loaded.price_rows,
        missing: loaded.missing,
        filled: loaded.cleaning.filled,
        dropped_leading: loaded.cleaning.dropped_leading,
        return_rows: r.len(),
        first_date: r.dates.first().map(ToString::to_string).unwrap_or_default(),
        last_date: r.dates.last().map(ToString::to_string).unwrap_or_default(),
    };
    write_json(&cfg.output_dir.join("ingest.json"), &summary)?;
    Ok(summary)
}

/// Digest of the labeled windows an encoder consumed.
pub fn windows_digest<'a>(windows: impl IntoIterator<Item = &'a LabeledWindow>) -> String {
    let mut h = Sha256::new();
    for w in windows {
        h.update((w.start_index as u64).to_le_bytes());
        h.update((w.values.len() as u64).to_le_bytes());
        for v in &w.values {
            h.update(v.to_le_bytes());
        }
        h.update(w.label.to_le_bytes());
    }
    hex(&h.finalize())
}

/// Encodes one window with the configured encoder; `window_id` keys the
/// quantum shot streams.
pub fn encode_one(cfg: &PipelineConfig, kind: FieldKind, window: &LabeledWindow) -> std::result::Result<AngularField, String> {
    let id = window.start_index as u64;
    let field = match kind {
        FieldKind::Gasf | FieldKind::Gadf => encode_window(&window.values, kind, cfg.normalization).map_err(|e| e.to_string())?,
        FieldKind::Qgasf => qgasf_image(&window.values, &cfg.qgaf_config(), id).map_err(|e| e.to_string())?,
        FieldKind::Qgadf => qgadf_image(&window.values, &cfg.qgaf_config(), id).map_err(|e| e.to_string())?,
    };
    Ok(field.with_start(window.start_index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub start_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub file: String,
    pub start_index: usize,
    pub label: f64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeManifest {
    pub config_hash: String,
    pub seed: u64,
    pub encoder: FieldKind,
    pub label_mode: LabelMode,
    pub window: WindowConfig,
    pub exact: bool,
    pub windows_total: usize,
    pub count: usize,
    pub skipped: Vec<Skip>,
    /// Digest of the windows that were encoded (skips excluded).
    pub windows_digest: String,
    pub archives: Vec<ArchiveEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes one archive per labeled window to `archives/{encoder}/`, plus
/// optional PGM/PNG previews, and a manifest.
pub fn run_encode(cfg: &PipelineConfig) -> Result<EncodeManifest> {
    let kind = cfg.encoder;
    let loaded = load_returns(cfg)?;
    let windows = labeled_windows(&loaded.returns.returns, &cfg.window)?;
    let encoded: Vec<_> = windows.par_iter().map(|w| encode_one(cfg, kind, w)).collect();

    let dir = archives_dir(cfg, kind);
    let img_dir = images_dir(cfg, kind);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    clear_stale(&dir, &[ARCHIVE_EXTENSION])?;
    clear_stale(&img_dir, &["pgm", "png", "json"])?;

    let provenance = Provenance {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    let range = cfg.imaging.range.unwrap_or_else(|| ValueRange::default_for(kind));
    let mut skipped = Vec::new();
    let mut kept = Vec::new();
    let mut archives = Vec::new();
    for (w, field) in windows.iter().zip(encoded) {
        let field = match field {
            Ok(f) => f,
            Err(reason) => {
                eprintln!("skipping window at {}: {reason}", w.start_index);
                skipped.push(Skip {
                    start_index: w.start_index,
                    reason,
                });
                continue;
            }
        };
        let archive = FieldArchive::new(&field, w.label, Some(provenance.clone()));
        let bytes = archive.encode()?;
        let file = archive_file_name(w.start_index);
        write_file(&dir.join(&file), &bytes)?;
        if cfg.imaging.export_pgm || cfg.imaging.export_png {
            let img = field_to_gray(&field, range, Some(w.label))?;
            let stem = file.trim_end_matches(&format!(".{ARCHIVE_EXTENSION}")).to_owned();
            fs::create_dir_all(&img_dir).map_err(|e| CliError::io(&img_dir, e))?;
            if cfg.imaging.export_pgm {
                write_pgm(&img, img_dir.join(format!("{stem}.pgm")))?;
            }
            if cfg.imaging.export_png {
                write_png(&img, img_dir.join(format!("{stem}.png")))?;
            }
        }
        archives.push(ArchiveEntry {
            file,
            start_index: w.start_index,
            label: archive.label,
            sha256: sha256_hex(&bytes),
        });
        kept.push(w);
    }

    let manifest = EncodeManifest {
        config_hash: provenance.config_hash,
        seed: cfg.seed,
        encoder: kind,
        label_mode: cfg.window.label_mode,
        window: cfg.window,
        exact: cfg.quantum.exact,
        windows_total: windows.len(),
        count: archives.len(),
        skipped,
        windows_digest: windows_digest(kept),
        archives,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads every archive in `dir`, ordered by window start.
pub fn read_archives(dir: &Path, size: usize) -> Result<Vec<(FieldArchive, Vec<u8>)>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(ARCHIVE_EXTENSION))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let archive = FieldArchive::read_expecting(&path, size)?;
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        out.push((archive, bytes));
    }
    out.sort_by_key(|(a, _)| a.field.source_window_start);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub mae: f64,
    pub mse: f64,
    pub report: String,
    pub report_sha256: String,
    pub checkpoint: String,
    pub checkpoint_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub seed: u64,
    pub encoder: FieldKind,
    pub archives: usize,
    pub archives_digest: String,
    /// Config hashes stamped into the archives that were read.
    pub archive_config_hashes: Vec<String>,
    pub loss: LossKind,
    pub epochs: usize,
    pub fold_mode: FoldMode,
    pub shuffle_seed: u64,
    /// Digest of the validation index sets, in fold order.
    pub split_digest: String,
    pub folds: Vec<FoldSummary>,
    pub aggregate: Metrics,
    pub mean_train_curve: Vec<f64>,
    pub mean_val_curve: Vec<f64>,
}

pub const METRICS_FILE: &str = "metrics.json";

/// Cross-validates the CNN on the archives in `archive_dir` (default:
/// this config's encoder directory). Writes fold CSVs, checkpoints and
/// `metrics.json` to `train/{encoder}/`.
pub fn run_train(cfg: &PipelineConfig, archive_dir: Option<&Path>) -> Result<TrainSummary> {
    let default_dir = archives_dir(cfg, cfg.encoder);
    let dir = archive_dir.unwrap_or(&default_dir);
    if !dir.is_dir() {
        return Err(CliError::usage(format!("archive directory {} does not exist", dir.display())));
    }
    let archives = read_archives(dir, cfg.window.window_size)?;
    if archives.is_empty() {
        return Err(CliError::usage(format!("no .{ARCHIVE_EXTENSION} archives in {}", dir.display())));
    }
    let kind = archives[0].0.field.kind;
    let fields: Vec<AngularField> = archives.iter().map(|(a, _)| a.field.clone()).collect();
    let inputs = prescale_fields(&fields)?;
    let samples: Vec<Sample> = inputs
        .into_iter()
        .zip(&archives)
        .map(|(input, (a, _))| Sample { input, target: a.label })
        .collect();

    let mut digest = Sha256::new();
    let mut stamped: Vec<String> = Vec::new();
    for (a, bytes) in &archives {
        digest.update((bytes.len() as u64).to_le_bytes());
        digest.update(bytes);
        if let Some(p) = &a.provenance {
            if !stamped.contains(&p.config_hash) {
                stamped.push(p.config_hash.clone());
            }
        }
    }

    let tcfg = cfg.train_config();
    let cv = cross_validate(&samples, &tcfg)?;
    let out = train_dir(cfg, kind);
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let mut split = Sha256::new();
    let mut folds = Vec::with_capacity(cv.folds.len());
    for f in &cv.folds {
        for &i in &f.validation {
            split.update((i as u64).to_le_bytes());
        }
        split.update(u64::MAX.to_le_bytes());
        let k = f.report.fold;
        let report = format!("fold_{k}.csv");
        let csv = f.report.to_csv();
        write_file(&out.join(&report), &csv)?;
        let checkpoint = format!("fold_{k}.ckpt");
        let ckpt_path = out.join(&checkpoint);
        save_checkpoint(&f.model, &f.optimizer, &ckpt_path)?;
        let ckpt_bytes = fs::read(&ckpt_path).map_err(|e| CliError::io(&ckpt_path, e))?;
        folds.push(FoldSummary {
            fold: k,
            train_size: f.report.train_size,
            val_size: f.report.val_size,
            mae: f.report.metrics.mae,
            mse: f.report.metrics.mse,
            report,
            report_sha256: sha256_hex(csv.as_bytes()),
            checkpoint,
            checkpoint_sha256: sha256_hex(&ckpt_bytes),
        });
    }

    let summary = TrainSummary {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        encoder: kind,
        archives: samples.len(),
        archives_digest: hex(&digest.finalize()),
        archive_config_hashes: stamped,
        loss: tcfg.loss,
        epochs: tcfg.epochs,
        fold_mode: tcfg.fold_mode,
        shuffle_seed: tcfg.shuffle_seed,
        split_digest: hex(&split.finalize()),
        folds,
        aggregate: cv.aggregate,
        mean_train_curve: cv.mean_train_curve(),
        mean_val_curve: cv.mean_val_curve(),
    };
    write_json(&out.join(METRICS_FILE), &summary)?;
    Ok(summary)
}
