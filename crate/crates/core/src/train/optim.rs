//! Adam and the multistep learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr_init: f64,
    pub lr_factor: f64,
    /// Epochs from which one more decay applies.
    pub lr_steps: Vec<usize>,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init >= 0.0 && self.lr_init.is_finite()) {
            return Err(Error::Config(format!("lr_init must be non-negative, got {}", self.lr_init)));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::Config(format!("lr_factor must lie in (0, 1), got {}", self.lr_factor)));
        }
        if self.lr_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("lr_steps must be strictly increasing, got {:?}", self.lr_steps)));
        }
        Ok(())
    }
}

/// `lr_init · lr_factor^k` with `k` the number of steps `<= epoch`.
pub fn lr_at_epoch(epoch: usize, s: &Schedule) -> f64 {
    s.lr_steps.iter().filter(|&&step| step <= epoch).fold(s.lr_init, |lr, _| lr * s.lr_factor)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates of one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(n: usize) -> Self {
        Moments { m: vec![T::zero(); n], v: vec![T::zero(); n] }
    }
}

/// One bias-corrected Adam update of `params` at step `t` (1-based).
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut Moments<T>, t: u64, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("adam_step", format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len())));
    }
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let one = T::one();
    let c1 = one - T::lit(cfg.beta1.powi(t as i32));
    let c2 = one - T::lit(cfg.beta2.powi(t as i32));
    let (lr, eps) = (T::lit(lr), T::lit(cfg.eps));
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub t: u64,
    pub moments: Vec<Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        Adam { cfg, t: 0, moments: store.params().iter().map(|p| Moments::zeros(p.value.numel())).collect() }
    }

    /// Apply the stored gradients; parameters without one are left alone
    /// (their moments still decay).
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        self.t += 1;
        for (p, state) in store.params_mut().iter_mut().zip(&mut self.moments) {
            let zeros;
            let g = match &p.grad {
                Some(g) => g.data(),
                None => {
                    zeros = vec![T::zero(); p.value.numel()];
                    &zeros
                }
            };
            adam_step(p.value.data_mut(), g, state, self.t, lr, &self.cfg)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule() -> Schedule {
        Schedule { lr_init: 0.001, lr_factor: 0.5, lr_steps: vec![15, 30] }
    }

    #[test]
    fn multistep_values() {
        let s = schedule();
        assert_eq!(lr_at_epoch(0, &s), 0.001);
        assert_eq!(lr_at_epoch(14, &s), 0.001);
        assert_eq!(lr_at_epoch(15, &s), 0.0005);
        assert_eq!(lr_at_epoch(29, &s), 0.0005);
        assert_eq!(lr_at_epoch(30, &s), 0.00025);
        assert_eq!(lr_at_epoch(1000, &s), 0.00025);
    }

    #[test]
    fn schedule_is_piecewise_constant_and_non_increasing() {
        let s = Schedule { lr_init: 0.01, lr_factor: 0.3, lr_steps: vec![2, 5, 9] };
        let lrs: Vec<f64> = (0..20).map(|e| lr_at_epoch(e, &s)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(lrs.windows(2).filter(|w| w[1] != w[0]).count(), 3);
    }

    #[test]
    fn schedule_validation() {
        let mut s = schedule();
        s.lr_steps = vec![30, 15];
        assert_eq!(s.validate().unwrap_err().code(), "E_CONFIG");
        let mut s = schedule();
        s.lr_factor = 1.0;
        assert_eq!(s.validate().unwrap_err().code(), "E_CONFIG");
        assert!(schedule().validate().is_ok());
    }

    #[test]
    fn first_adam_step_hand_value() {
        let mut p = [0.0f64];
        let mut st = Moments::zeros(1);
        adam_step(&mut p, &[1.0], &mut st, 1, 0.001, &AdamConfig::default()).unwrap();
        let expect = -0.001 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - expect).abs() < 1e-18, "{}", p[0]);
    }

    #[test]
    fn zero_gradients_leave_parameters_alone() {
        let mut p = [0.3f64, -1.7, 5.0];
        let before = p;
        let mut st = Moments::zeros(3);
        for t in 1..=50 {
            adam_step(&mut p, &[0.0; 3], &mut st, t, 0.01, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_update_opposes_gradient() {
        for g in [-3.0f64, -1e-6, 2e-4, 10.0] {
            let mut p = [1.0f64];
            let mut st = Moments::zeros(1);
            adam_step(&mut p, &[g], &mut st, 1, 0.001, &AdamConfig::default()).unwrap();
            assert_eq!((p[0] - 1.0).signum(), -g.signum());
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut st = Moments::<f64>::zeros(2);
        assert_eq!(adam_step(&mut [0.0; 2], &[0.0; 3], &mut st, 1, 0.1, &AdamConfig::default()).unwrap_err().code(), "E_SHAPE");
    }
}
