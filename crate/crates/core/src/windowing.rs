//! Fixed-length overlapping windows over a return series, with regression labels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marketdata::{interval_return, MarketDataError};

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("invalid window config: {0}")]
    Config(String),
    #[error("series of length {len} is shorter than window size {window_size}")]
    TooShort { len: usize, window_size: usize },
    #[error("label for window at {start}: {source}")]
    Label {
        start: usize,
        #[source]
        source: MarketDataError,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Label is the interval return of the window itself.
    #[default]
    SameWindow,
    /// Label is the interval return of the `horizon` days after the window.
    NextHorizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window_size: usize,
    pub stride: usize,
    pub label_mode: LabelMode,
    pub horizon: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_size: 30,
            stride: 10,
            label_mode: LabelMode::SameWindow,
            horizon: 30,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), WindowError> {
        if self.window_size < 2 {
            return Err(WindowError::Config(format!(
                "window_size must be at least 2, got {}",
                self.window_size
            )));
        }
        if self.stride == 0 || self.stride > self.window_size {
            return Err(WindowError::Config(format!(
                "stride must be in 1..={}, got {}",
                self.window_size, self.stride
            )));
        }
        if self.horizon == 0 {
            return Err(WindowError::Config("horizon must be positive".to_owned()));
        }
        Ok(())
    }

    pub fn overlap(&self) -> usize {
        self.window_size - self.stride
    }
}

/// A contiguous slice of the return series starting at `start_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start_index: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub start_index: usize,
    pub values: Vec<f64>,
    pub label: f64,
}

/// Number of complete windows `segment` emits for a series of length `len`.
pub fn window_count(len: usize, cfg: &WindowConfig) -> usize {
    if len < cfg.window_size {
        0
    } else {
        (len - cfg.window_size) / cfg.stride + 1
    }
}

/// Splits `series` into complete windows starting at 0, stride, 2*stride, ...
pub fn segment(series: &[f64], cfg: &WindowConfig) -> Result<Vec<Window>, WindowError> {
    cfg.validate()?;
    if series.len() < cfg.window_size {
        return Err(WindowError::TooShort {
            len: series.len(),
            window_size: cfg.window_size,
        });
    }
    Ok((0..window_count(series.len(), cfg))
        .map(|k| {
            let start = k * cfg.stride;
            Window {
                start_index: start,
                values: series[start..start + cfg.window_size].to_vec(),
            }
        })
        .collect())
}

/// Attaches labels to windows produced by [`segment`] over the same series.
///
/// In `NextHorizon` mode windows without `horizon` following days are dropped.
pub fn label_windows(
    series: &[f64],
    windows: Vec<Window>,
    cfg: &WindowConfig,
) -> Result<Vec<LabeledWindow>, WindowError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(windows.len());
    for w in windows {
        let target = match cfg.label_mode {
            LabelMode::SameWindow => &w.values[..],
            LabelMode::NextHorizon => {
                let from = w.start_index + cfg.window_size;
                let to = from + cfg.horizon;
                if to > series.len() {
                    continue;
                }
                &series[from..to]
            }
        };
        let label = interval_return(target)
            .map_err(|source| WindowError::Label {
                start: w.start_index,
                source,
            })?
            .growth();
        out.push(LabeledWindow {
            start_index: w.start_index,
            values: w.values,
            label,
        });
    }
    Ok(out)
}

/// `segment` followed by `label_windows`.
pub fn labeled_windows(
    series: &[f64],
    cfg: &WindowConfig,
) -> Result<Vec<LabeledWindow>, WindowError> {
    let windows = segment(series, cfg)?;
    label_windows(series, windows, cfg)
}
