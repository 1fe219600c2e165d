//! Adam and a reduce-on-plateau learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::linalg::ensure_finite;

/// Adam moments and hyperparameters for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self::with_betas(len, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(len: usize, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1,
            beta2,
            epsilon,
            lr,
        }
    }

    /// One descent step: `params ← params − lr · m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("adam params", self.m.len(), params.len())?;
        check_len("adam grads", self.m.len(), grads.len())?;
        ensure_finite("adam gradient", grads)?;
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (libm::sqrt(v_hat) + self.epsilon);
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// improvement of the monitored loss.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub best: f64,
    pub stale_epochs: usize,
    pub lr: f64,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64) -> Result<Self> {
        if !(lr > 0.0) || !(factor > 0.0 && factor <= 1.0) || patience == 0 {
            return Err(Error::Config(alloc::format!(
                "plateau scheduler needs lr > 0, factor in (0, 1], patience >= 1 (lr={lr}, factor={factor}, patience={patience})"
            )));
        }
        Ok(Self {
            patience,
            factor,
            best: f64::INFINITY,
            stale_epochs: 0,
            lr,
        })
    }

    /// Records one epoch's validation loss and returns the learning rate to use next.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
            if self.stale_epochs >= self.patience {
                self.lr *= self.factor;
                self.stale_epochs = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        let mut adam = AdamState::new(3, 1e-3);
        for _ in 0..5 {
            adam.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(adam.t, 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for &g in &[3.0, -0.01, 1e4] {
            let mut p = vec![0.0];
            let mut adam = AdamState::new(1, 1e-4);
            adam.step(&mut p, &[g]).unwrap();
            assert!((p[0].abs() - 1e-4).abs() < 1e-9, "g={g} p={}", p[0]);
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    #[test]
    fn matches_reference_loop_on_quadratic() {
        // f(p) = p², grad 2p
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0];
        let mut adam = AdamState::new(1, lr);
        let (mut rp, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = [2.0 * p[0]];
            adam.step(&mut p, &g).unwrap();
            let g = 2.0 * rp;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            rp -= lr * mh / (vh.sqrt() + eps);
            assert!((p[0] - rp).abs() < 1e-12);
        }
        assert!(p[0] * p[0] < 1.0);
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut adam = AdamState::new(2, 1e-3);
        let mut p = vec![0.0; 2];
        assert_eq!(
            adam.step(&mut p, &[f64::NAN, 0.0]),
            Err(Error::NonFinite("adam gradient"))
        );
        assert!(adam.step(&mut p, &[0.0]).is_err());
    }

    #[test]
    fn plateau_never_fires_on_improvement() {
        let mut s = PlateauScheduler::new(1e-4, 15, 0.5).unwrap();
        for e in 0..100 {
            assert_eq!(s.step(100.0 - e as f64), 1e-4);
        }
    }

    #[test]
    fn plateau_halves_after_patience() {
        let mut s = PlateauScheduler::new(1e-4, 15, 0.5).unwrap();
        s.step(1.0);
        let mut lrs = Vec::new();
        for _ in 0..30 {
            lrs.push(s.step(1.0));
        }
        assert_eq!(lrs[13], 1e-4);
        assert_eq!(lrs[14], 5e-5);
        assert_eq!(lrs[28], 5e-5);
        assert_eq!(lrs[29], 2.5e-5);
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn plateau_validates() {
        assert!(PlateauScheduler::new(0.0, 15, 0.5).is_err());
        assert!(PlateauScheduler::new(1e-3, 0, 0.5).is_err());
        assert!(PlateauScheduler::new(1e-3, 3, 1.5).is_err());
    }
}
