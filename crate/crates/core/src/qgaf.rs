//! Quantum Gramian angular fields.
//!
//! Each pixel is a one-qubit circuit on `|0>`. For the summation field the
//! circuit is `Ry(2a) Ry(2b)` and `P(|0>) = cos^2(a + b)`; for the difference
//! field it is `Ry(2a) Ry(-2b)` and `P(|1>) = sin^2(a - b)`. Raw returns are
//! used as the angles, so no rescaling or `arccos` is involved.
//!
//! Measurement only yields the squared value. Under [`SignMode::Analytic`]
//! the sign is recovered from the inputs, which requires the angle to stay
//! inside `(-pi/2, pi/2)`; daily returns always do.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaf::{AngularField, FieldKind};
use crate::qsim::{sample_shots, QsimError, QubitState, RngSeed, StreamCoords, DEFAULT_SHOTS};

#[derive(Debug, Error, PartialEq)]
pub enum QgafError {
    #[error("|{what}| = {value} is not below pi/2; sign cannot be recovered from the measurement")]
    SignDomain { what: &'static str, value: f64 },
    #[error("pixel ({i}, {j}): {source}")]
    Pixel {
        i: usize,
        j: usize,
        #[source]
        source: Box<QgafError>,
    },
    #[error("window needs at least 2 values, got {0}")]
    TooShort(usize),
    #[error(transparent)]
    Sim(#[from] QsimError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// Sign taken from the inputs; rejects angles at or beyond pi/2.
    #[default]
    Analytic,
    /// Always the positive root.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct QgafConfig {
    pub shots: u64,
    pub sign_mode: SignMode,
    pub seed: u64,
    /// Replace sampled frequencies with the exact probabilities.
    pub exact: bool,
}

impl Default for QgafConfig {
    fn default() -> Self {
        Self {
            shots: DEFAULT_SHOTS,
            sign_mode: SignMode::Analytic,
            seed: 0,
            exact: false,
        }
    }
}

/// The infinite-shot variant of `cfg`.
pub fn exact_p_mode(cfg: QgafConfig) -> QgafConfig {
    QgafConfig { exact: true, ..cfg }
}

fn check_sign_domain(cfg: &QgafConfig, what: &'static str, angle: f64) -> Result<(), QgafError> {
    if cfg.sign_mode == SignMode::Analytic && !(angle.abs() < FRAC_PI_2) {
        return Err(QgafError::SignDomain { what, value: angle });
    }
    Ok(())
}

/// Frequency of `|0>` (or of `|1>` when `count_ones`) for the prepared state.
fn estimate(
    state: &QubitState,
    count_ones: bool,
    cfg: &QgafConfig,
    coords: StreamCoords,
) -> Result<f64, QgafError> {
    if cfg.exact {
        return Ok(if count_ones { state.prob_one() } else { state.prob_zero() });
    }
    let counts = sample_shots(state, cfg.shots, &RngSeed::new(cfg.seed, coords))?;
    Ok(if count_ones { counts.freq_one() } else { counts.freq_zero() })
}

/// Estimate of `cos(a + b)` from `Ry(2a)` then `Ry(2b)` on `|0>`.
pub fn qgasf_pixel(a: f64, b: f64, cfg: &QgafConfig, coords: StreamCoords) -> Result<f64, QgafError> {
    check_sign_domain(cfg, "a + b", a + b)?;
    let state = QubitState::ZERO.ry(2.0 * a)?.ry(2.0 * b)?;
    let p = estimate(&state, false, cfg, coords)?;
    // cos(a + b) > 0 inside the analytic domain, so both modes take the positive root.
    Ok(p.sqrt())
}

/// Estimate of `sin(a - b)` from `Ry(2a)` then `Ry(-2b)` on `|0>`.
pub fn qgadf_pixel(a: f64, b: f64, cfg: &QgafConfig, coords: StreamCoords) -> Result<f64, QgafError> {
    check_sign_domain(cfg, "a - b", a - b)?;
    let state = QubitState::ZERO.ry(2.0 * a)?.ry(-2.0 * b)?;
    let magnitude = estimate(&state, true, cfg, coords)?.sqrt();
    Ok(match cfg.sign_mode {
        SignMode::Analytic if a < b => -magnitude,
        _ => magnitude,
    })
}

fn build_image(
    kind: FieldKind,
    window: &[f64],
    cfg: &QgafConfig,
    window_id: u64,
) -> Result<AngularField, QgafError> {
    let n = window.len();
    if n < 2 {
        return Err(QgafError::TooShort(n));
    }
    let pixel = match kind {
        FieldKind::Qgasf => qgasf_pixel,
        FieldKind::Qgadf => qgadf_pixel,
        _ => unreachable!("classical kinds are built by the gaf module"),
    };
    // Every (i, j) has its own random stream, so evaluation order is irrelevant.
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    pixel(window[i], window[j], cfg, StreamCoords::new(window_id, i, j)).map_err(
                        |e| QgafError::Pixel {
                            i,
                            j,
                            source: Box::new(e),
                        },
                    )
                })
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(AngularField {
        kind,
        size: n,
        data: rows.concat(),
        source_window_start: window_id as usize,
    })
}

/// Full `n x n` QGASF image; every pixel, including the diagonal and both
/// triangles, is an independent circuit.
pub fn qgasf_image(window: &[f64], cfg: &QgafConfig, window_id: u64) -> Result<AngularField, QgafError> {
    build_image(FieldKind::Qgasf, window, cfg, window_id)
}

pub fn qgadf_image(window: &[f64], cfg: &QgafConfig, window_id: u64) -> Result<AngularField, QgafError> {
    build_image(FieldKind::Qgadf, window, cfg, window_id)
}
