//! Adam optimizer with coupled L2 regularization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::DenseMat;

/// Optimizer hyperparameters. Weight decay is coupled: `decay * param` is
/// added to the gradient before the moment updates, not applied to the
/// parameter directly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment estimates for one parameter matrix.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: DenseMat,
    v: DenseMat,
    step: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        AdamState {
            m: DenseMat::zeros(rows, cols),
            v: DenseMat::zeros(rows, cols),
            step: 0,
        }
    }

    /// Applies one bias-corrected update to `param` in place.
    pub fn update(
        &mut self,
        cfg: &AdamConfig,
        param: &mut DenseMat,
        grad: &DenseMat,
    ) -> Result<()> {
        if param.shape() != grad.shape() || param.shape() != self.m.shape() {
            return Err(Error::shape(format!(
                "adam update param {:?} grad {:?} state {:?}",
                param.shape(),
                grad.shape(),
                self.m.shape()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for i in 0..param.data().len() {
            let g = grad.data()[i] + cfg.weight_decay * param.data()[i];
            let m = cfg.beta1 * self.m.data()[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * self.v.data()[i] + (1.0 - cfg.beta2) * g * g;
            self.m.data_mut()[i] = m;
            self.v.data_mut()[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            param.data_mut()[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_and_zero_moments_leave_parameter_unchanged() {
        let mut state = AdamState::new(2, 2);
        let cfg = AdamConfig::default();
        let mut param = DenseMat::filled(2, 2, 3.0);
        let before = param.clone();
        state
            .update(&cfg, &mut param, &DenseMat::zeros(2, 2))
            .unwrap();
        assert_eq!(param, before);
    }

    #[test]
    fn first_step_moves_by_roughly_the_learning_rate() {
        let mut state = AdamState::new(1, 1);
        let cfg = AdamConfig::default();
        let mut param = DenseMat::filled(1, 1, 0.0);
        state
            .update(&cfg, &mut param, &DenseMat::filled(1, 1, 1.0))
            .unwrap();
        // Bias correction makes m_hat = v_hat = 1 on step one, so the move
        // is lr / (1 + eps).
        assert!((param.get(0, 0) + cfg.lr).abs() < 1e-6);
    }

    #[test]
    fn converges_on_a_one_dimensional_quadratic() {
        // Minimize (p - 3)^2 from p = 0; gradient is 2(p - 3).
        let mut state = AdamState::new(1, 1);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut param = DenseMat::filled(1, 1, 0.0);
        for _ in 0..100 {
            let g = 2.0 * (param.get(0, 0) - 3.0);
            state
                .update(&cfg, &mut param, &DenseMat::filled(1, 1, g))
                .unwrap();
        }
        assert!((param.get(0, 0) - 3.0).abs() < 0.1);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut state = AdamState::new(2, 3);
            let cfg = AdamConfig {
                weight_decay: 5e-4,
                ..AdamConfig::default()
            };
            let mut param = DenseMat::from_flat(
                2,
                3,
                vec![0.3, -0.2, 0.1, 0.8, -0.5, 0.05],
            )
            .unwrap();
            for step in 0..50 {
                let g = param.map(|v| (v * 1.7 + step as f64 * 0.01).sin());
                state.update(&cfg, &mut param, &g).unwrap();
            }
            param
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn decay_pulls_an_unforced_parameter_toward_zero() {
        let mut state = AdamState::new(1, 1);
        let cfg = AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        let mut param = DenseMat::filled(1, 1, 2.0);
        for _ in 0..200 {
            state
                .update(&cfg, &mut param, &DenseMat::zeros(1, 1))
                .unwrap();
        }
        assert!(param.get(0, 0).abs() < 2.0 * 0.9);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut state = AdamState::new(2, 2);
        let cfg = AdamConfig::default();
        let mut param = DenseMat::zeros(2, 2);
        assert!(state
            .update(&cfg, &mut param, &DenseMat::zeros(3, 2))
            .is_err());
    }
}
