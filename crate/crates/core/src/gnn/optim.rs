//! Loss, Adam and the step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cross-entropy of two logits against class `y`, as `logsumexp(z) - z[y]`.
pub fn loss_ce(z: [f64; 2], y: usize) -> f64 {
    let m = z[0].max(z[1]);
    m + ((z[0] - m).exp() + (z[1] - m).exp()).ln() - z[y]
}

/// Gradient of [`loss_ce`]: `softmax(z) - onehot(y)`.
pub fn loss_ce_grad(z: [f64; 2], y: usize) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let (e0, e1) = ((z[0] - m).exp(), (z[1] - m).exp());
    let mut g = [e0 / (e0 + e1), e1 / (e0 + e1)];
    g[y] -= 1.0;
    g
}

/// Mean cross-entropy over a batch and its logit gradients.
pub fn batch_loss(logits: &[[f64; 2]], labels: &[usize]) -> (f64, Vec<[f64; 2]>) {
    let scale = 1.0 / logits.len() as f64;
    let loss = logits.iter().zip(labels).map(|(z, &y)| loss_ce(*z, y)).sum::<f64>() * scale;
    let grads = logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| loss_ce_grad(*z, y).map(|g| g * scale))
        .collect();
    (loss, grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch(format!(
                "Adam state for {} values, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("gradient {i} is not finite")));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `base * gamma^floor(epoch / step)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub gamma: f64,
    pub step: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { base: 1e-3, gamma: 0.5, step: 10 }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base * self.gamma.powi((epoch / self.step.max(1)) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cross_entropy_values() {
        assert!((loss_ce([0.0, 0.0], 0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((loss_ce([0.0, 0.0], 1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(loss_ce([30.0, -30.0], 0) < 1e-12);
        let direct = (1f64.exp() + 2f64.exp()).ln() - 2.0;
        assert!((loss_ce([1.0, 2.0], 1) - direct).abs() < 1e-15);
        assert!((loss_ce([1.0, 2.0], 1) - 0.313262).abs() < 5e-7);
        assert!(loss_ce([1000.0, -1000.0], 1).is_finite());
    }

    #[test]
    fn gradient_is_softmax_minus_onehot() {
        let z = [0.3, -1.2];
        let h = 1e-6;
        for y in 0..2 {
            let g = loss_ce_grad(z, y);
            for k in 0..2 {
                let (mut up, mut dn) = (z, z);
                up[k] += h;
                dn[k] -= h;
                let fd = (loss_ce(up, y) - loss_ce(dn, y)) / (2.0 * h);
                assert!((g[k] - fd).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn adam_with_zero_gradient_only_counts() {
        let mut adam = Adam::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn adam_first_step_is_about_lr_times_sign() {
        let mut adam = Adam::new(2);
        let mut p = vec![0.0, 0.0];
        adam.step(&mut p, &[3.0, -0.5], 0.01).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-9 && (p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_three_steps_match_hand_table() {
        // g = 1 each step, lr 0.1, p0 = 0:
        // t | m        | v          | m_hat | v_hat | p
        // 1 | 0.1      | 0.001      | 1     | 1     | -0.1/(1+1e-8)
        // 2 | 0.19     | 0.001999   | 1     | 1     | -0.2/(1+1e-8)
        // 3 | 0.271    | 0.002997001| 1     | 1     | -0.3/(1+1e-8)
        let table = [
            (0.1, 0.001, -0.099_999_999),
            (0.19, 0.001_999, -0.199_999_998),
            (0.271, 0.002_997_001, -0.299_999_997),
        ];
        let mut adam = Adam::new(1);
        let mut p = vec![0.0];
        for (m, v, expect) in table {
            adam.step(&mut p, &[1.0], 0.1).unwrap();
            assert!((adam.m[0] - m).abs() < 1e-15);
            assert!((adam.v[0] - v).abs() < 1e-15);
            assert!((p[0] - expect).abs() < 1e-15, "{} vs {expect}", p[0]);
        }
    }

    #[test]
    fn adam_rejects_mismatch_and_nan() {
        let mut adam = Adam::new(2);
        assert!(adam.step(&mut [0.0], &[1.0], 0.1).is_err());
        assert!(adam.step(&mut [0.0, 0.0], &[1.0, f64::NAN], 0.1).is_err());
    }

    #[test]
    fn schedule_steps() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(9), 1e-3);
        assert!((s.lr_at(10) - 5e-4).abs() < 1e-18);
        assert!((s.lr_at(39) - 1.25e-4).abs() < 1e-18);
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative_and_stable(a in -500.0f64..500.0, b in -500.0f64..500.0, y in 0usize..2) {
            let l = loss_ce([a, b], y);
            prop_assert!(l.is_finite() && l >= 0.0);
            let g = loss_ce_grad([a, b], y);
            prop_assert!((g[0] + g[1]).abs() < 1e-12);
        }
    }
}
