#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Daily returns from a two-regime switching process. Calm stretches drift
/// up with low volatility; stressed stretches drift down with high
/// volatility, so a window's dispersion carries information about its
/// interval return.
pub fn synthetic_returns(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let calm = Normal::new(0.0015, 0.01).unwrap();
    let stressed = Normal::new(-0.002, 0.025).unwrap();
    let mut in_stress = false;
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < 0.03 {
                in_stress = !in_stress;
            }
            if in_stress { stressed.sample(&mut rng) } else { calm.sample(&mut rng) }
        })
        .collect()
}

/// Business days starting Monday 2015-01-05.
pub fn trading_days(n: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2015, 1, 5).unwrap();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.checked_add_days(Days::new(1)).unwrap();
    }
    out
}

/// Price CSV whose close-to-close returns are `returns`; `None` closes are
/// written as empty cells.
pub fn price_csv(closes: &[Option<f64>]) -> String {
    let mut out = String::from("date,close\n");
    for (d, c) in trading_days(closes.len()).iter().zip(closes) {
        match c {
            Some(c) => writeln!(out, "{d},{c}").unwrap(),
            None => writeln!(out, "{d},").unwrap(),
        }
    }
    out
}

pub fn prices_from_returns(returns: &[f64]) -> Vec<Option<f64>> {
    let mut p = 100.0;
    let mut out = vec![Some(p)];
    for r in returns {
        p *= 1.0 + r;
        out.push(Some(p));
    }
    out
}

pub fn write_prices(dir: &Path, name: &str, closes: &[Option<f64>]) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, price_csv(closes)).unwrap();
    path
}
