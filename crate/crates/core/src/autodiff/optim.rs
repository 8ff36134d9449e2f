//! AdamW with decoupled weight decay and a single-cycle cosine schedule.

use std::f64::consts::PI;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for every parameter tensor, in parameter order.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig, params: &[&Tensor]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One AdamW update at learning rate `lr`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim(format!(
                "adamw: state tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if !(lr >= 0.0) {
            return Err(Error::contract(format!("adamw: learning rate {lr} is negative")));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.len() != self.m[i].len() {
                return Err(Error::dim(format!(
                    "adamw: parameter {i} has shape {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let AdamWConfig {
            weight_decay,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                *pv *= decay;
                m[j] = beta1 * m[j] + (1.0 - beta1) * gv;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gv * gv;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Single-cycle cosine decay from `lr0` at step 0 to zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::contract(format!(
            "cosine_lr: step {step} outside [0, {total_steps}]"
        )));
    }
    let progress = step as f64 / total_steps as f64;
    Ok(lr0 * 0.5 * (1.0 + (PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut p = Tensor::row(&[0.5, -1.25, 3.0]);
        let before = p.clone();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = AdamWState::new(cfg, &[&p]);
        for _ in 0..5 {
            st.step(&mut [&mut p], &[Tensor::zeros(&[1, 3])], 0.01).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        // p = 1, g = 0.5, lr = 0.1, wd = 0.01, betas 0.9/0.999, eps 1e-8:
        // decay: 1 * (1 - 0.001) = 0.999
        // m = 0.05, v = 0.00025, m_hat = 0.5, v_hat = 0.25
        // p = 0.999 - 0.1 * 0.5 / (0.5 + 1e-8)
        let expected = 0.999 - 0.05 / 0.50000001;
        let mut p = Tensor::scalar(1.0);
        let cfg = AdamWConfig {
            lr0: 0.1,
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut st = AdamWState::new(cfg, &[&p]);
        st.step(&mut [&mut p], &[Tensor::scalar(0.5)], 0.1).unwrap();
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert!((p.data()[0] - 0.899000002).abs() < 1e-12);
    }

    #[test]
    fn decay_only_shrinks_by_factor() {
        let mut p = Tensor::row(&[2.0, -4.0]);
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut st = AdamWState::new(cfg, &[&p]);
        st.step(&mut [&mut p], &[Tensor::zeros(&[1, 2])], 0.5).unwrap();
        assert_eq!(p.data(), &[2.0 * 0.95, -4.0 * 0.95]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::row(&[1.0, 2.0]);
        let mut st = AdamWState::new(AdamWConfig::default(), &[&p]);
        let err = st.step(&mut [&mut p], &[Tensor::zeros(&[2, 1])], 0.1);
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-4).unwrap(), 1e-4);
        assert!(cosine_lr(100, 100, 1e-4).unwrap().abs() < 1e-20);
        assert!((cosine_lr(50, 100, 1e-4).unwrap() - 0.5e-4).abs() < 1e-18);
        assert!(cosine_lr(101, 100, 1e-4).is_err());
        assert!(cosine_lr(0, 0, 1e-4).is_err());
    }

    proptest! {
        #[test]
        fn cosine_is_non_increasing(total in 1usize..5000, lr0 in 1e-6f64..1.0) {
            for s in 0..total.min(400) {
                let s = s * total / total.min(400);
                if s + 1 > total { break; }
                prop_assert!(cosine_lr(s, total, lr0).unwrap() >= cosine_lr(s + 1, total, lr0).unwrap());
            }
        }
    }
}
