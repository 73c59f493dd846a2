//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Learning rate `0.002 eta`, betas `(0, 0.99^eta)`.
    pub fn from_eta(eta: f64) -> Self {
        Self { lr: 0.002 * eta, beta1: 0.0, beta2: 0.99f64.powf(eta), eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.entries().iter().map(|e| Tensor::zeros(&e.value.shape)).collect();
        Self { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every trainable entry; `grads` follows the store order.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) {
        assert_eq!(grads.len(), params.entries().len(), "one gradient per stored tensor");
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (k, entry) in params.entries_mut().iter_mut().enumerate() {
            if !entry.trainable {
                continue;
            }
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for i in 0..g.len() {
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g.data[i];
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
                let mhat = m.data[i] / c1;
                let vhat = v.data[i] / c2;
                entry.value.data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.add("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]));
        p.add_buffer("stat", Tensor::new(vec![1], vec![7.0]));
        p
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = store();
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig::from_eta(0.5), &p);
        opt.step(&mut p, &[Tensor::zeros(&[3]), Tensor::zeros(&[1])]);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let mut p = store();
        let cfg = AdamConfig::from_eta(0.5);
        let mut opt = Adam::new(cfg, &p);
        let g = Tensor::new(vec![3], vec![0.3, -4.0, 1e-3]);
        opt.step(&mut p, &[g.clone(), Tensor::full(&[1], 9.0)]);
        let w = p.by_name("w").unwrap();
        for (i, start) in [1.0, -2.0, 0.5].iter().enumerate() {
            let expect = start - cfg.lr * g.data[i].signum();
            assert!((w.data[i] - expect).abs() <= 1e-4 * cfg.lr, "{} vs {expect}", w.data[i]);
        }
        assert_eq!(p.by_name("stat").unwrap().data, vec![7.0]);
    }

    #[test]
    fn eta_schedule() {
        let c = AdamConfig::from_eta(0.5);
        assert!((c.lr - 0.001).abs() < 1e-15);
        assert_eq!(c.beta1, 0.0);
        assert!((c.beta2 - 0.99f64.sqrt()).abs() < 1e-15);
    }
}
