//! Adam / AdamW over flat parameter slices and a plateau scheduler.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
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

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay (AdamW); 0 gives plain Adam.
    pub weight_decay: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Adam {
            weight_decay,
            ..Adam::new(lr)
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&self, params: &mut [f64], grads: &[f64], state: &mut AdamState) {
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            if self.weight_decay != 0.0 {
                params[i] *= 1.0 - self.lr * self.weight_decay;
            }
            state.m[i] = self.beta1 * state.m[i] + (1.0 - self.beta1) * g;
            state.v[i] = self.beta2 * state.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = state.m[i] / bc1;
            let vhat = state.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Learning-rate reduction on a stalled maximised metric, relative
/// threshold mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReduceLrOnPlateau {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub cooldown: usize,
    pub min_lr: f64,
    best: f64,
    bad_epochs: usize,
    cooldown_left: usize,
}

impl ReduceLrOnPlateau {
    pub fn new(factor: f64, patience: usize, threshold: f64, cooldown: usize, min_lr: f64) -> Self {
        ReduceLrOnPlateau {
            factor,
            patience,
            threshold,
            cooldown,
            min_lr,
            best: f64::NEG_INFINITY,
            bad_epochs: 0,
            cooldown_left: 0,
        }
    }

    /// Feeds one epoch's metric and returns the possibly reduced rate.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        let improved = if self.best.is_finite() {
            metric > self.best * (1.0 + self.threshold)
        } else {
            true
        };
        if improved {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.cooldown_left > 0 {
            self.cooldown_left -= 1;
            self.bad_epochs = 0;
        }
        if self.bad_epochs > self.patience {
            self.cooldown_left = self.cooldown;
            self.bad_epochs = 0;
            let new_lr = (lr * self.factor).max(self.min_lr);
            if lr - new_lr > 1e-12 {
                return new_lr;
            }
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let opt = Adam::new(0.1);
        let mut p = vec![1.0, -1.0];
        let mut st = AdamState::new(2);
        opt.step(&mut p, &[3.0, -0.5], &mut st);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let opt = Adam::new(0.05);
        let mut p = vec![3.0];
        let mut st = AdamState::new(1);
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0)];
            opt.step(&mut p, &g, &mut st);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn plateau_halves_after_patience() {
        let mut s = ReduceLrOnPlateau::new(0.5, 2, 2e-3, 1, 1e-5);
        let mut lr = 1e-3;
        for m in [0.5, 0.5, 0.5] {
            lr = s.step(m, lr);
        }
        assert_eq!(lr, 1e-3);
        lr = s.step(0.5, lr);
        assert_eq!(lr, 5e-4);
        // cooldown epoch does not count
        lr = s.step(0.5, lr);
        assert_eq!(lr, 5e-4);
        lr = s.step(0.9, lr);
        assert_eq!(lr, 5e-4);
    }

    #[test]
    fn plateau_respects_min_lr() {
        let mut s = ReduceLrOnPlateau::new(0.5, 0, 0.0, 0, 1e-5);
        let mut lr = 2e-5;
        for _ in 0..5 {
            lr = s.step(0.1, lr);
        }
        assert_eq!(lr, 1e-5);
    }
}
