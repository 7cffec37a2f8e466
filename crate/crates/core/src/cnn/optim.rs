use serde::{Deserialize, Serialize};

use super::{CnnError, CnnModel, ParamSet, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            m: ParamSet::zeros(),
            v: ParamSet::zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked before anything
/// is modified, so a rejected step leaves model and state untouched.
pub fn adam_step(model: &mut CnnModel, grads: &ParamSet, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    for (param, g) in grads.tensors() {
        if let Some(index) = g.iter().position(|v| !v.is_finite()) {
            return Err(CnnError::NonFiniteGradient { param, index });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let tensors = model
        .params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut());
    for ((((_, w), (_, g)), (_, m)), (_, v)) in tensors {
        for i in 0..w.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            w[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::Architecture;

    fn model() -> CnnModel {
        CnnModel::init(Architecture::new(30).unwrap(), 8)
    }

    fn one_hot(index: usize, g: f64) -> ParamSet {
        let mut p = ParamSet::zeros();
        *p.flat_mut(index) = g;
        p
    }

    /// Closed-form Adam for a scalar gradient sequence.
    fn reference_updates(grads: &[f64], cfg: &AdamConfig) -> Vec<f64> {
        let (mut m, mut v) = (0.0, 0.0);
        grads
            .iter()
            .enumerate()
            .map(|(k, &g)| {
                let t = (k + 1) as i32;
                m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
                v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
                let m_hat = m / (1.0 - cfg.beta1.powi(t));
                let v_hat = v / (1.0 - cfg.beta2.powi(t));
                -cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps)
            })
            .collect()
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut m = model();
        let before = m.clone();
        let mut state = AdamState::default();
        adam_step(&mut m, &ParamSet::zeros(), &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(m, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let cfg = AdamConfig::default();
        for g in [3.5, -0.02, 1e-3] {
            let mut m = model();
            let before = m.params.flatten()[100];
            let mut state = AdamState::default();
            adam_step(&mut m, &one_hot(100, g), &mut state, &cfg).unwrap();
            let delta = m.params.flatten()[100] - before;
            let expected = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((delta - expected).abs() < 1e-15);
            assert!((delta + cfg.lr * g.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn multi_step_matches_closed_form() {
        let cfg = AdamConfig::default();
        for seq in [vec![0.4, 0.4], vec![1.0, 0.1], vec![-2.0, 0.5, 0.25]] {
            let mut m = model();
            let mut state = AdamState::default();
            let mut prev = m.params.flatten()[7];
            for (g, expected) in seq.iter().zip(reference_updates(&seq, &cfg)) {
                adam_step(&mut m, &one_hot(7, *g), &mut state, &cfg).unwrap();
                let now = m.params.flatten()[7];
                assert!((now - prev - expected).abs() < 1e-15, "{seq:?}");
                prev = now;
            }
        }
        // A smaller second gradient shrinks the second update.
        let u = reference_updates(&[1.0, 0.1], &cfg);
        assert!(u[1].abs() < u[0].abs());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut m = model();
        let before = m.clone();
        let mut state = AdamState::default();
        let mut g = ParamSet::zeros();
        g.fc1_w[3] = f64::NAN;
        let err = adam_step(&mut m, &g, &mut state, &AdamConfig::default()).unwrap_err();
        assert_eq!(err, CnnError::NonFiniteGradient { param: "fc1.weight", index: 3 });
        assert_eq!(m, before);
        assert_eq!(state.step, 0);
    }
}
