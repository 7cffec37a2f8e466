//! Classical Gramian angular fields.
//!
//! A window is rescaled into `[0, 1]` or `[-1, 1]`, each value is read as the
//! cosine of an angle, and the field is the matrix of pairwise angle sums
//! (GASF, `cos(phi_i + phi_j)`) or differences (GADF, `sin(phi_i - phi_j)`).
//! Both fields are also available through the equivalent outer-product form,
//! which never calls `arccos`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed outside `[-1, 1]` before `arccos` input is rejected.
pub const DOMAIN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GafError {
    #[error("window needs at least 2 values, got {0}")]
    TooShort(usize),
    #[error("degenerate window: max equals min ({0})")]
    Degenerate(f64),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("value {value} at index {index} is outside [-1, 1]")]
    Domain { index: usize, value: f64 },
    #[error("{0} is not a classical encoder")]
    NotClassical(FieldKind),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormRange {
    /// `[0, 1]`
    Unit,
    /// `[-1, 1]`
    #[default]
    Sym,
}

impl NormRange {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            NormRange::Unit => (0.0, 1.0),
            NormRange::Sym => (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    values: Vec<f64>,
    range: NormRange,
}

impl NormalizedSeries {
    /// Wraps values that are already scaled. Values must lie within the
    /// range's bounds up to [`DOMAIN_TOLERANCE`].
    pub fn from_scaled(values: Vec<f64>, range: NormRange) -> Result<Self, GafError> {
        let (lo, hi) = range.bounds();
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(GafError::NonFinite(index));
            }
            if value < lo - DOMAIN_TOLERANCE || value > hi + DOMAIN_TOLERANCE {
                return Err(GafError::Domain { index, value });
            }
        }
        Ok(Self { values, range })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn range(&self) -> NormRange {
        self.range
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn min_max(x: &[f64]) -> Result<(f64, f64), GafError> {
    if x.len() < 2 {
        return Err(GafError::TooShort(x.len()));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(GafError::NonFinite(i));
    }
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Err(GafError::Degenerate(max));
    }
    Ok((min, max))
}

/// Min-max scaling into `[0, 1]`.
pub fn normalize_unit(x: &[f64]) -> Result<NormalizedSeries, GafError> {
    let (min, max) = min_max(x)?;
    let span = max - min;
    let values = x.iter().map(|v| (v - min) / span).collect();
    Ok(NormalizedSeries {
        values,
        range: NormRange::Unit,
    })
}

/// Min-max scaling into `[-1, 1]`, computed as `((x - max) + (x - min)) / (max - min)`.
pub fn normalize_sym(x: &[f64]) -> Result<NormalizedSeries, GafError> {
    let (min, max) = min_max(x)?;
    let span = max - min;
    let values = x.iter().map(|v| ((v - max) + (v - min)) / span).collect();
    Ok(NormalizedSeries {
        values,
        range: NormRange::Sym,
    })
}

pub fn normalize(x: &[f64], range: NormRange) -> Result<NormalizedSeries, GafError> {
    match range {
        NormRange::Unit => normalize_unit(x),
        NormRange::Sym => normalize_sym(x),
    }
}

/// Angles `phi = arccos(x)` and radii `r = t / N` with 1-based `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarSeries {
    pub phi: Vec<f64>,
    pub r: Vec<f64>,
}

pub fn to_polar(ns: &NormalizedSeries) -> Result<PolarSeries, GafError> {
    let n = ns.len();
    let mut phi = Vec::with_capacity(n);
    for (index, &value) in ns.values.iter().enumerate() {
        if !value.is_finite() {
            return Err(GafError::NonFinite(index));
        }
        if value.abs() > 1.0 + DOMAIN_TOLERANCE {
            return Err(GafError::Domain { index, value });
        }
        phi.push(value.clamp(-1.0, 1.0).acos());
    }
    let r = (1..=n).map(|t| t as f64 / n as f64).collect();
    Ok(PolarSeries { phi, r })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Gasf,
    Gadf,
    Qgasf,
    Qgadf,
}

impl FieldKind {
    pub const ALL: [FieldKind; 4] = [
        FieldKind::Gasf,
        FieldKind::Gadf,
        FieldKind::Qgasf,
        FieldKind::Qgadf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Gasf => "gasf",
            FieldKind::Gadf => "gadf",
            FieldKind::Qgasf => "qgasf",
            FieldKind::Qgadf => "qgadf",
        }
    }

    pub fn is_quantum(self) -> bool {
        matches!(self, FieldKind::Qgasf | FieldKind::Qgadf)
    }

    pub fn is_summation(self) -> bool {
        matches!(self, FieldKind::Gasf | FieldKind::Qgasf)
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_uppercase())
    }
}

impl std::str::FromStr for FieldKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FieldKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown encoder {s:?}; expected gasf, gadf, qgasf or qgadf"))
    }
}

/// Square row-major matrix produced by one of the encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularField {
    pub kind: FieldKind,
    pub size: usize,
    pub data: Vec<f64>,
    pub source_window_start: usize,
}

impl AngularField {
    pub fn from_fn(kind: FieldKind, size: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                data.push(f(i, j));
            }
        }
        Self {
            kind,
            size,
            data,
            source_window_start: 0,
        }
    }

    pub fn with_start(mut self, start: usize) -> Self {
        self.source_window_start = start;
        self
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn max_abs_diff(&self, other: &AngularField) -> f64 {
        assert_eq!(self.size, other.size, "field sizes differ");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `cos(phi_i + phi_j)` via the polar angles.
pub fn gasf(ns: &NormalizedSeries) -> Result<AngularField, GafError> {
    let polar = to_polar(ns)?;
    let phi = &polar.phi;
    Ok(AngularField::from_fn(FieldKind::Gasf, phi.len(), |i, j| {
        (phi[i] + phi[j]).cos()
    }))
}

/// `sin(phi_i - phi_j)` via the polar angles.
pub fn gadf(ns: &NormalizedSeries) -> Result<AngularField, GafError> {
    let polar = to_polar(ns)?;
    let phi = &polar.phi;
    Ok(AngularField::from_fn(FieldKind::Gadf, phi.len(), |i, j| {
        (phi[i] - phi[j]).sin()
    }))
}

/// Clamped values and their complements `sqrt(1 - x^2)`.
fn cos_sin_parts(ns: &NormalizedSeries) -> Result<(Vec<f64>, Vec<f64>), GafError> {
    let mut cos = Vec::with_capacity(ns.len());
    for (index, &value) in ns.values.iter().enumerate() {
        if !value.is_finite() {
            return Err(GafError::NonFinite(index));
        }
        if value.abs() > 1.0 + DOMAIN_TOLERANCE {
            return Err(GafError::Domain { index, value });
        }
        cos.push(value.clamp(-1.0, 1.0));
    }
    let sin = cos.iter().map(|x| (1.0 - x * x).sqrt()).collect();
    Ok((cos, sin))
}

/// `x x' - s s'` with `s = sqrt(1 - x^2)`; equal to [`gasf`].
pub fn gasf_matrix(ns: &NormalizedSeries) -> Result<AngularField, GafError> {
    let (x, s) = cos_sin_parts(ns)?;
    Ok(AngularField::from_fn(FieldKind::Gasf, x.len(), |i, j| {
        x[i] * x[j] - s[i] * s[j]
    }))
}

/// `s x' - x s'` with `s = sqrt(1 - x^2)`; equal to [`gadf`].
pub fn gadf_matrix(ns: &NormalizedSeries) -> Result<AngularField, GafError> {
    let (x, s) = cos_sin_parts(ns)?;
    Ok(AngularField::from_fn(FieldKind::Gadf, x.len(), |i, j| {
        s[i] * x[j] - x[i] * s[j]
    }))
}

/// Normalizes a raw window and encodes it as GASF or GADF.
pub fn encode_window(
    values: &[f64],
    kind: FieldKind,
    range: NormRange,
) -> Result<AngularField, GafError> {
    let ns = normalize(values, range)?;
    match kind {
        FieldKind::Gasf => gasf(&ns),
        FieldKind::Gadf => gadf(&ns),
        other => Err(GafError::NotClassical(other)),
    }
}
