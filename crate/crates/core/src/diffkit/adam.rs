use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected ADAM update. Parameters and state are left untouched
/// when any gradient entry is non-finite.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape("ADAM buffers do not match the parameter count".into()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, &AdamConfig::default()).unwrap();
        let expected = -1e-4 * (1.0 / (1.0 + 1e-8));
        assert!((p[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![0.3, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![0.3, -2.0]);
    }

    #[test]
    fn two_steps_equal_size() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &[0.7], &mut s, &cfg).unwrap();
        let d1 = p[0].abs();
        adam_step(&mut p, &[0.7], &mut s, &cfg).unwrap();
        let d2 = (p[0].abs() - d1).abs();
        assert!((d2 - d1).abs() < 0.01 * d1);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        assert!(adam_step(&mut p, &[f64::NAN], &mut s, &AdamConfig::default()).is_err());
        assert_eq!((p[0], s.step), (1.0, 0));
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = vec![1.0, 2.0];
        let mut s = AdamState::new(2);
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        for _ in 0..5 {
            adam_step(&mut p, &[0.4, -3.0], &mut s, &cfg).unwrap();
        }
        assert_eq!(p, vec![1.0, 2.0]);
    }
}
