use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place. A non-finite gradient aborts the
/// step before anything is modified.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        let grads = [3.0, -0.02, 1e-3, -250.0];
        let mut params = [0.0; 4];
        let mut st = AdamState::new(4);
        adam_step(&mut params, &grads, &mut st, &cfg).unwrap();
        for (p, g) in params.iter().zip(&grads) {
            let expected = -cfg.learning_rate * g / (g.abs() + cfg.eps);
            assert!((p - expected).abs() < 1e-15);
            assert!((p.abs() - cfg.learning_rate).abs() < cfg.learning_rate * 1e-5);
            assert_eq!(p.signum(), -g.signum());
        }
    }

    #[test]
    fn zero_gradient_only_counts_the_step() {
        let mut params = [0.5, -1.0];
        let mut st = AdamState::new(2);
        adam_step(&mut params, &[0.0, 0.0], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(params, [0.5, -1.0]);
        assert_eq!(st.m, vec![0.0, 0.0]);
        assert_eq!(st.v, vec![0.0, 0.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn steps_are_stateful() {
        let cfg = AdamConfig::default();
        let g = [1.0, -2.0];
        let mut twice = [0.0, 0.0];
        let mut st = AdamState::new(2);
        adam_step(&mut twice, &g, &mut st, &cfg).unwrap();
        adam_step(&mut twice, &g, &mut st, &cfg).unwrap();
        let mut once = [0.0, 0.0];
        let mut st1 = AdamState::new(2);
        adam_step(&mut once, &[2.0, -4.0], &mut st1, &cfg).unwrap();
        assert_ne!(twice, once);
        assert_eq!(st.step, 2);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut params = [1.0, 2.0];
        let mut st = AdamState::new(2);
        let err = adam_step(&mut params, &[0.1, f64::NAN], &mut st, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient));
        assert_eq!(params, [1.0, 2.0]);
        assert_eq!(st.step, 0);
    }
}
