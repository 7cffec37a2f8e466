//! Single-qubit statevector simulation restricted to `Ry` rotations.
//!
//! Starting from `|0>`, `Ry` gates keep the amplitudes real, so the state is
//! two `f64`s. Measurement is modelled as one binomial draw per circuit from
//! a random stream keyed by `(global_seed, window_id, i, j)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_SHOTS: u64 = 1024;

#[derive(Debug, Error, PartialEq)]
pub enum QsimError {
    #[error("rotation angle must be finite, got {0}")]
    NonFiniteAngle(f64),
    #[error("shot count must be at least 1")]
    NoShots,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState {
    pub amp0: f64,
    pub amp1: f64,
}

impl QubitState {
    pub const ZERO: QubitState = QubitState { amp0: 1.0, amp1: 0.0 };
    pub const ONE: QubitState = QubitState { amp0: 0.0, amp1: 1.0 };

    pub fn norm_sqr(&self) -> f64 {
        self.amp0 * self.amp0 + self.amp1 * self.amp1
    }

    /// Applies `[[cos t/2, -sin t/2], [sin t/2, cos t/2]]`.
    pub fn ry(self, theta: f64) -> Result<QubitState, QsimError> {
        if !theta.is_finite() {
            return Err(QsimError::NonFiniteAngle(theta));
        }
        let (s, c) = (theta / 2.0).sin_cos();
        Ok(QubitState {
            amp0: c * self.amp0 - s * self.amp1,
            amp1: s * self.amp0 + c * self.amp1,
        })
    }

    pub fn prob_zero(&self) -> f64 {
        self.amp0 * self.amp0
    }

    pub fn prob_one(&self) -> f64 {
        self.amp1 * self.amp1
    }
}

pub fn ry_apply(state: QubitState, theta: f64) -> Result<QubitState, QsimError> {
    state.ry(theta)
}

pub fn prob_zero(state: &QubitState) -> f64 {
    state.prob_zero()
}

/// Position of a circuit inside an encoding run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StreamCoords {
    pub window_id: u64,
    pub i: u32,
    pub j: u32,
}

impl StreamCoords {
    pub fn new(window_id: u64, i: usize, j: usize) -> Self {
        Self {
            window_id,
            i: i as u32,
            j: j as u32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct RngSeed {
    pub global_seed: u64,
    pub coords: StreamCoords,
}

impl RngSeed {
    pub fn new(global_seed: u64, coords: StreamCoords) -> Self {
        Self { global_seed, coords }
    }

    /// Independent generator for this seed's coordinates. The key is hashed so
    /// neighbouring coordinates do not produce correlated ChaCha keys.
    pub fn stream(&self) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(b"qgaf.shot-stream.v1");
        h.update(self.global_seed.to_le_bytes());
        h.update(self.coords.window_id.to_le_bytes());
        h.update(self.coords.i.to_le_bytes());
        h.update(self.coords.j.to_le_bytes());
        let key: [u8; 32] = h.finalize().into();
        ChaCha8Rng::from_seed(key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotCounts {
    pub zeros: u64,
    pub ones: u64,
}

impl ShotCounts {
    pub fn shots(&self) -> u64 {
        self.zeros + self.ones
    }

    pub fn freq_zero(&self) -> f64 {
        self.zeros as f64 / self.shots() as f64
    }

    pub fn freq_one(&self) -> f64 {
        self.ones as f64 / self.shots() as f64
    }
}

/// Measures `state` in the computational basis `shots` times.
pub fn sample_shots(state: &QubitState, shots: u64, seed: &RngSeed) -> Result<ShotCounts, QsimError> {
    if shots == 0 {
        return Err(QsimError::NoShots);
    }
    let p = state.prob_zero().clamp(0.0, 1.0);
    let zeros = Binomial::new(shots, p)
        .expect("probability clamped to [0, 1]")
        .sample(&mut seed.stream());
    Ok(ShotCounts {
        zeros,
        ones: shots - zeros,
    })
}
