//! Time-series imaging toolkit: daily returns are windowed, encoded as
//! classical (GASF/GADF) or simulated-quantum (QGASF/QGADF) angular fields,
//! and regressed with a small CNN.

pub mod cnn;
pub mod gaf;
pub mod imaging;
pub mod marketdata;
pub mod qgaf;
pub mod qsim;
pub mod windowing;

pub use gaf::{AngularField, FieldKind, NormRange};
