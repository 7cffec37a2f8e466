//! GASF-vs-QGASF comparison: tables, loss curves and plots.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qgaf_core::cnn::{FoldMode, LossKind};
use qgaf_core::qgaf::SignMode;
use qgaf_core::FieldKind;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{read_json, run_encode, run_train, write_file, write_json, TrainSummary};

/// `(baseline - candidate) / baseline` in percent; `None` for a zero baseline.
pub fn reduction_pct(baseline: f64, candidate: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (baseline - candidate) / baseline * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderResult {
    pub encoder: FieldKind,
    pub mae: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub mae_pct: Option<f64>,
    pub mse_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonProvenance {
    pub config_hash: String,
    pub seed: u64,
    pub shuffle_seed: u64,
    pub fold_mode: FoldMode,
    pub folds: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub exact: bool,
    pub shots: u64,
    pub sign_mode: SignMode,
    pub windows_digest: String,
    pub split_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockComparison {
    pub name: String,
    pub baseline: EncoderResult,
    pub candidate: EncoderResult,
    pub reduction: Reduction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<ComparisonProvenance>,
}

impl StockComparison {
    pub fn new(name: impl Into<String>, baseline: EncoderResult, candidate: EncoderResult) -> Self {
        Self {
            name: name.into(),
            reduction: Reduction {
                mae_pct: reduction_pct(baseline.mae, candidate.mae),
                mse_pct: reduction_pct(baseline.mse, candidate.mse),
            },
            baseline,
            candidate,
            provenance: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub stocks: Vec<StockComparison>,
}

fn fmt_metric(v: f64) -> String {
    if v == 0.0 || v.abs() >= 1e-3 {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map(|p| format!("{p:.1}")).unwrap_or_else(|| "n/a".to_owned())
}

impl ComparisonReport {
    pub fn merge(reports: impl IntoIterator<Item = ComparisonReport>) -> Result<Self> {
        let stocks: Vec<StockComparison> = reports.into_iter().flat_map(|r| r.stocks).collect();
        if let Some(first) = stocks.first() {
            let pair = (first.baseline.encoder, first.candidate.encoder);
            if let Some(s) = stocks.iter().find(|s| (s.baseline.encoder, s.candidate.encoder) != pair) {
                return Err(CliError::usage(format!(
                    "cannot merge {} vs {} with {} vs {}",
                    pair.0, pair.1, s.baseline.encoder, s.candidate.encoder
                )));
            }
        }
        Ok(Self { stocks })
    }

    fn rows(&self) -> Vec<(FieldKind, Vec<EncoderResult>)> {
        let Some(first) = self.stocks.first() else {
            return Vec::new();
        };
        vec![
            (first.baseline.encoder, self.stocks.iter().map(|s| s.baseline).collect()),
            (first.candidate.encoder, self.stocks.iter().map(|s| s.candidate).collect()),
        ]
    }

    /// One row per encoder, an MAE and an MSE column per stock.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("model");
        for s in &self.stocks {
            write!(out, ",{0} MAE,{0} MSE", s.name).unwrap();
        }
        out.push('\n');
        for (kind, results) in self.rows() {
            out.push_str(&kind.to_string());
            for r in results {
                write!(out, ",{},{}", r.mae, r.mse).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn reductions_csv(&self) -> String {
        let mut out = String::from("stock,mae_reduction_pct,mse_reduction_pct\n");
        for s in &self.stocks {
            let cell = |v: Option<f64>| v.map(|p| p.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{}", s.name, cell(s.reduction.mae_pct), cell(s.reduction.mse_pct)).unwrap();
        }
        out
    }

    pub fn table_markdown(&self) -> String {
        let mut out = String::from("| Model |");
        for s in &self.stocks {
            write!(out, " {0} MAE | {0} MSE |", s.name).unwrap();
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|---:|".repeat(self.stocks.len()));
        out.push('\n');
        for (kind, results) in self.rows() {
            write!(out, "| {kind} |").unwrap();
            for r in results {
                write!(out, " {} | {} |", fmt_metric(r.mae), fmt_metric(r.mse)).unwrap();
            }
            out.push('\n');
        }
        out.push_str("\n| Reduction (%) |");
        for s in &self.stocks {
            write!(out, " {0} MAE | {0} MSE |", s.name).unwrap();
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|---:|".repeat(self.stocks.len()));
        out.push_str("\n| |");
        for s in &self.stocks {
            write!(out, " {} | {} |", fmt_pct(s.reduction.mae_pct), fmt_pct(s.reduction.mse_pct)).unwrap();
        }
        out.push('\n');
        out
    }

    /// Writes `report.json`, `table.csv`, `table.md` and `reductions.csv`.
    pub fn write_tables(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("report.json"), self)?;
        write_file(&dir.join("table.csv"), self.table_csv())?;
        write_file(&dir.join("table.md"), self.table_markdown())?;
        write_file(&dir.join("reductions.csv"), self.reductions_csv())
    }
}

pub fn curves_csv(summary: &TrainSummary) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for (i, (t, v)) in summary.mean_train_curve.iter().zip(&summary.mean_val_curve).enumerate() {
        writeln!(out, "{},{t:.17e},{v:.17e}", i + 1).unwrap();
    }
    out
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Minimal line plot: axes, min/max tick labels, one polyline per series.
pub fn line_plot_svg(title: &str, y_label: &str, series: &[(String, &[f64])], note: &str) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let all = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let x = |i: usize| left + pw * if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let y = |v: f64| top + ph * (1.0 - (v - lo) / (hi - lo));

    let mut svg = String::new();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(svg, "<desc>{note}</desc>").unwrap();
    writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="16" font-family="sans-serif">{title}</text>"#, w / 2.0).unwrap();
    writeln!(
        svg,
        r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    )
    .unwrap();
    for (v, anchor_y) in [(hi, top), (lo, top + ph)] {
        writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="11" font-family="sans-serif">{v:.3e}</text>"#,
            left - 6.0,
            anchor_y + 4.0
        )
        .unwrap();
    }
    for (i, label) in [(0, 1), (n.saturating_sub(1), n)] {
        writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="11" font-family="sans-serif">{label}</text>"#,
            x(i),
            top + ph + 16.0
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12" font-family="sans-serif">epoch</text>"#,
        left + pw / 2.0,
        h - 12.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" font-size="12" font-family="sans-serif" transform="rotate(-90 16 {0})">{y_label}</text>"#,
        top + ph / 2.0
    )
    .unwrap();
    for (k, (name, values)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v)))
            .collect();
        writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, points.join(" ")).unwrap();
        let ly = top + 14.0 + 16.0 * k as f64;
        writeln!(
            svg,
            r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{2}" y="{3}" font-size="12" font-family="sans-serif">{name}</text>"#,
            left + pw - 110.0,
            left + pw - 90.0,
            left + pw - 84.0,
            ly + 4.0
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn compare_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.output_dir.join("compare")
}

/// Encodes and trains the baseline and candidate encoders on the same
/// series and splits, then writes the comparison artifacts to `compare/`.
pub fn run_compare(cfg: &PipelineConfig) -> Result<ComparisonReport> {
    let (b, c) = (cfg.compare.baseline, cfg.compare.candidate);
    let arms = [cfg.with_encoder(b), cfg.with_encoder(c)];
    let encoded = [run_encode(&arms[0])?, run_encode(&arms[1])?];
    if encoded[0].windows_digest != encoded[1].windows_digest {
        return Err(CliError::usage(format!(
            "refusing to compare: {b} encoded {} windows ({} skipped) and {c} encoded {} ({} skipped); the window sets differ",
            encoded[0].count,
            encoded[0].skipped.len(),
            encoded[1].count,
            encoded[1].skipped.len()
        )));
    }
    let trained = [run_train(&arms[0], None)?, run_train(&arms[1], None)?];
    let (tb, tc) = (&trained[0], &trained[1]);
    if tb.shuffle_seed != tc.shuffle_seed || tb.fold_mode != tc.fold_mode || tb.split_digest != tc.split_digest {
        return Err(CliError::usage(format!(
            "refusing to compare: split seeds {} vs {} give different folds",
            tb.shuffle_seed, tc.shuffle_seed
        )));
    }

    let tcfg = cfg.train_config();
    let provenance = ComparisonProvenance {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        shuffle_seed: tcfg.shuffle_seed,
        fold_mode: tcfg.fold_mode,
        folds: tcfg.folds,
        epochs: tcfg.epochs,
        loss: tcfg.loss,
        exact: cfg.quantum.exact,
        shots: cfg.quantum.shots,
        sign_mode: cfg.quantum.sign_mode,
        windows_digest: encoded[0].windows_digest.clone(),
        split_digest: tb.split_digest.clone(),
    };
    let result = |t: &TrainSummary| EncoderResult {
        encoder: t.encoder,
        mae: t.aggregate.mae,
        mse: t.aggregate.mse,
    };
    let mut stock = StockComparison::new(cfg.source.display_name(), result(tb), result(tc));
    stock.provenance = Some(provenance);
    let report = ComparisonReport { stocks: vec![stock] };

    let dir = compare_dir(cfg);
    report.write_tables(&dir)?;
    let note = format!("config_hash={} seed={}", cfg.hash(), cfg.seed);
    for t in &trained {
        write_file(&dir.join(format!("curves_{}.csv", t.encoder.as_str())), curves_csv(t))?;
    }
    let loss_name = match tcfg.loss {
        LossKind::Mse => "MSE",
        LossKind::Mae => "MAE",
    };
    for (file, title, pick) in [
        ("loss_train.svg", "Train loss", 0),
        ("loss_val.svg", "Validation loss", 1),
    ] {
        let series: Vec<(String, &[f64])> = trained
            .iter()
            .map(|t| {
                let curve = if pick == 0 { &t.mean_train_curve } else { &t.mean_val_curve };
                (t.encoder.to_string(), &curve[..])
            })
            .collect();
        write_file(&dir.join(file), line_plot_svg(title, loss_name, &series, &note))?;
    }
    Ok(report)
}

/// Combines saved `report.json` files into one multi-stock table.
pub fn run_merge(inputs: &[PathBuf], out: &Path) -> Result<ComparisonReport> {
    if inputs.is_empty() {
        return Err(CliError::usage("nothing to merge"));
    }
    let reports = inputs.iter().map(|p| read_json(p)).collect::<Result<Vec<ComparisonReport>>>()?;
    let merged = ComparisonReport::merge(reports)?;
    merged.write_tables(out)?;
    Ok(merged)
}
