//! Price ingestion, gap cleaning, and return computation.

use std::collections::HashSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("invalid series: {0}")]
    Validation(String),
    #[error("fetch failed with HTTP status {status}")]
    HttpStatus { status: u16 },
    #[error("network error: {0}")]
    Network(String),
}

pub type Result<T> = std::result::Result<T, MarketDataError>;

/// Column names used to locate the date and close fields in a CSV header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub date_column: String,
    pub close_column: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            date_column: "date".to_owned(),
            close_column: "close".to_owned(),
        }
    }
}

/// Closing prices keyed by strictly increasing dates. `None` marks a missing close.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    dates: Vec<NaiveDate>,
    closes: Vec<Option<f64>>,
}

impl PriceSeries {
    /// Builds a series from already-sorted rows. Dates must be strictly increasing.
    pub fn new(dates: Vec<NaiveDate>, closes: Vec<Option<f64>>) -> Result<Self> {
        if dates.len() != closes.len() {
            return Err(MarketDataError::Validation(format!(
                "{} dates but {} closes",
                dates.len(),
                closes.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(MarketDataError::Validation(format!(
                "dates not strictly increasing at {}",
                w[1]
            )));
        }
        Ok(Self { dates, closes })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn closes(&self) -> &[Option<f64>] {
        &self.closes
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.closes.iter().filter(|c| c.is_none()).count()
    }
}

/// Daily returns aligned with the later date of each close-to-close pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub dates: Vec<NaiveDate>,
    pub returns: Vec<f64>,
}

impl ReturnSeries {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

/// Parses a price CSV from disk. See [`parse_csv`] for the format.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<PriceSeries> {
    let path = path.as_ref();
    let io_err = |source| MarketDataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(io_err)?;
    parse_csv(&text, schema)
}

/// Parses comma-delimited UTF-8 text with a header row. Empty close cells are
/// treated as missing. Rows are sorted by date on output.
pub fn parse_csv(text: &str, schema: &CsvSchema) -> Result<PriceSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader.headers().map_err(|e| MarketDataError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MarketDataError::Parse {
                line: 1,
                message: format!("missing column {name:?}"),
            })
    };
    let date_idx = column(&schema.date_column)?;
    let close_idx = column(&schema.close_column)?;

    let mut rows: Vec<(NaiveDate, Option<f64>)> = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| MarketDataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize| {
            record.get(idx).ok_or_else(|| MarketDataError::Parse {
                line,
                message: format!("row has {} fields", record.len()),
            })
        };
        let raw_date = field(date_idx)?;
        let date = NaiveDate::parse_from_str(raw_date, DATE_FORMAT).map_err(|e| {
            MarketDataError::Parse {
                line,
                message: format!("invalid date {raw_date:?}: {e}"),
            }
        })?;
        let raw_close = field(close_idx)?;
        let close = if raw_close.is_empty() {
            None
        } else {
            let v: f64 = raw_close.parse().map_err(|_| MarketDataError::Parse {
                line,
                message: format!("invalid close {raw_close:?}"),
            })?;
            if !v.is_finite() {
                return Err(MarketDataError::Parse {
                    line,
                    message: format!("non-finite close {raw_close:?}"),
                });
            }
            Some(v)
        };
        if !seen.insert(date) {
            return Err(MarketDataError::Validation(format!(
                "duplicate date {date} at line {line}"
            )));
        }
        rows.push((date, close));
    }
    if rows.is_empty() {
        return Err(MarketDataError::Validation("no data rows".to_owned()));
    }
    rows.sort_by_key(|(d, _)| *d);
    let (dates, closes) = rows.into_iter().unzip();
    PriceSeries::new(dates, closes)
}

/// Downloads a CSV body with a plain GET and parses it like [`load_csv`].
pub fn fetch_csv_url(url: &str, schema: &CsvSchema) -> Result<PriceSeries> {
    let mut response = ureq::get(url).call().map_err(|e| match e {
        ureq::Error::StatusCode(status) => MarketDataError::HttpStatus { status },
        other => MarketDataError::Network(other.to_string()),
    })?;
    let body = response
        .body_mut()
        .read_to_string()
        .map_err(|e| MarketDataError::Network(e.to_string()))?;
    parse_csv(&body, schema)
}

/// How missing closes are filled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleaningPolicy {
    /// Repeat the most recent prior close.
    #[default]
    ForwardFill,
    /// Mean of up to five prior observed closes.
    Ma5,
}

/// What [`clean_with_report`] changed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CleanReport {
    pub filled: usize,
    pub dropped_leading: usize,
}

pub fn clean(series: &PriceSeries, policy: CleaningPolicy) -> Result<PriceSeries> {
    clean_with_report(series, policy).map(|(s, _)| s)
}

/// Fills interior gaps according to `policy` and drops leading gaps that
/// have no prior observation.
pub fn clean_with_report(
    series: &PriceSeries,
    policy: CleaningPolicy,
) -> Result<(PriceSeries, CleanReport)> {
    if series.is_empty() {
        return Err(MarketDataError::Validation("empty series".to_owned()));
    }
    let Some(first) = series.closes.iter().position(Option::is_some) else {
        return Err(MarketDataError::Validation(
            "all closes are missing".to_owned(),
        ));
    };

    let mut report = CleanReport {
        filled: 0,
        dropped_leading: first,
    };
    let mut observed: Vec<f64> = Vec::new();
    let mut closes: Vec<f64> = Vec::with_capacity(series.len() - first);
    for close in &series.closes[first..] {
        let value = match close {
            Some(v) => {
                observed.push(*v);
                *v
            }
            None => {
                report.filled += 1;
                match policy {
                    CleaningPolicy::ForwardFill => *closes.last().expect("first close observed"),
                    CleaningPolicy::Ma5 => {
                        let tail = &observed[observed.len().saturating_sub(5)..];
                        tail.iter().sum::<f64>() / tail.len() as f64
                    }
                }
            }
        };
        closes.push(value);
    }
    let cleaned = PriceSeries {
        dates: series.dates[first..].to_vec(),
        closes: closes.into_iter().map(Some).collect(),
    };
    Ok((cleaned, report))
}

/// Close-to-close relative change: `(c[t] - c[t-1]) / c[t-1]`.
pub fn daily_returns(series: &PriceSeries) -> Result<ReturnSeries> {
    if series.len() < 2 {
        return Err(MarketDataError::Validation(format!(
            "need at least 2 closes, got {}",
            series.len()
        )));
    }
    let mut closes = Vec::with_capacity(series.len());
    for (date, close) in series.dates.iter().zip(&series.closes) {
        match close {
            None => {
                return Err(MarketDataError::Validation(format!(
                    "missing close at {date}; clean the series first"
                )))
            }
            Some(c) if *c <= 0.0 => {
                return Err(MarketDataError::Validation(format!(
                    "non-positive close {c} at {date}"
                )))
            }
            Some(c) => closes.push(*c),
        }
    }
    let returns = closes.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect();
    Ok(ReturnSeries {
        dates: series.dates[1..].to_vec(),
        returns,
    })
}

/// Cumulative growth factor of a run of daily returns, `prod(1 + r)`.
///
/// This is the growth factor itself (1.0 for a flat window); use
/// [`IntervalReturn::net`] for the conventional "growth minus one".
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct IntervalReturn(pub f64);

impl IntervalReturn {
    pub fn growth(self) -> f64 {
        self.0
    }

    pub fn net(self) -> f64 {
        self.0 - 1.0
    }
}

pub fn interval_return(window: &[f64]) -> Result<IntervalReturn> {
    if window.is_empty() {
        return Err(MarketDataError::Validation("empty window".to_owned()));
    }
    let mut product = 1.0;
    for (i, r) in window.iter().enumerate() {
        let factor = 1.0 + r;
        if !(factor > 0.0) {
            return Err(MarketDataError::Validation(format!(
                "1 + r = {factor} at offset {i} is not positive"
            )));
        }
        product *= factor;
    }
    Ok(IntervalReturn(product))
}
