//! Per-channel batch normalization.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch statistics of one training-mode call: per-channel mean and
/// unbiased variance, for updating the running estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchStats {
    /// Exponential update of running statistics.
    pub fn blend_into(&self, running_mean: &mut Tensor, running_var: &mut Tensor) {
        for (r, m) in running_mean.data.iter_mut().zip(&self.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in running_var.data.iter_mut().zip(&self.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}

fn layout(shape: &[usize]) -> (usize, usize, usize) {
    let (b, c) = (shape[0], shape[1]);
    (b, c, shape[2..].iter().product())
}

impl Tape {
    /// Training-mode batch norm of `x` (`[B, C, ...]`) with affine `gamma`,
    /// `beta` (`[C]`), normalizing with the statistics of this batch.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> (Var, BatchStats) {
        let xt = self.value(x);
        let (b, c, inner) = layout(&xt.shape);
        let count = (b * inner) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for bi in 0..b {
            for ch in 0..c {
                let s = &xt.data[(bi * c + ch) * inner..(bi * c + ch + 1) * inner];
                mean[ch] += s.iter().sum::<f64>() / count;
            }
        }
        for bi in 0..b {
            for ch in 0..c {
                let s = &xt.data[(bi * c + ch) * inner..(bi * c + ch + 1) * inner];
                var[ch] += s.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>() / count;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = Tensor::zeros(&xt.shape);
        for (k, v) in xhat.data.iter_mut().enumerate() {
            let ch = (k / inner) % c;
            *v = (xt.data[k] - mean[ch]) * inv_std[ch];
        }
        let (gt, bt) = (self.value(gamma), self.value(beta));
        let out = Tensor::new(
            xt.shape.clone(),
            xhat.data.iter().enumerate().map(|(k, v)| gt.data[(k / inner) % c] * v + bt.data[(k / inner) % c]).collect(),
        );
        let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        let stats = BatchStats { mean, var: var.iter().map(|v| v * unbiased).collect() };
        let y = self.push(
            out,
            &[x, gamma, beta],
            Box::new(move |g, _, ins| {
                let gamma = ins[1];
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for (k, gv) in g.data.iter().enumerate() {
                    let ch = (k / inner) % c;
                    gg[ch] += gv * xhat.data[k];
                    gb[ch] += gv;
                }
                // dxhat = g gamma; dx = inv_std (dxhat - mean(dxhat) - xhat mean(dxhat xhat)).
                let mut gx = Tensor::zeros(&g.shape);
                for (k, v) in gx.data.iter_mut().enumerate() {
                    let ch = (k / inner) % c;
                    let d = g.data[k] * gamma.data[ch];
                    *v = inv_std[ch] * (d - gamma.data[ch] * (gb[ch] + xhat.data[k] * gg[ch]) / count);
                }
                vec![gx, Tensor::new(vec![c], gg), Tensor::new(vec![c], gb)]
            }),
        );
        (y, stats)
    }

    /// Inference-mode batch norm: a fixed per-channel affine map using the
    /// running statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, running_mean: &Tensor, running_var: &Tensor) -> Var {
        let c = self.shape(x)[1];
        let (gt, bt) = (self.value(gamma).clone(), self.value(beta).clone());
        let scale: Vec<f64> = (0..c).map(|ch| 1.0 / (running_var.data[ch] + BN_EPS).sqrt()).collect();
        // y = gamma * s * (x - m) + beta, written as one scale and shift per channel.
        let mul = Tensor::new(vec![c], (0..c).map(|ch| gt.data[ch] * scale[ch]).collect());
        let add = Tensor::new(vec![c], (0..c).map(|ch| bt.data[ch] - gt.data[ch] * scale[ch] * running_mean.data[ch]).collect());
        let xt = self.value(x);
        let (_, _, inner) = layout(&xt.shape);
        let xhat: Vec<f64> = xt.data.iter().enumerate().map(|(k, v)| (v - running_mean.data[(k / inner) % c]) * scale[(k / inner) % c]).collect();
        let out = Tensor::new(
            xt.shape.clone(),
            xt.data.iter().enumerate().map(|(k, v)| mul.data[(k / inner) % c] * v + add.data[(k / inner) % c]).collect(),
        );
        self.push(
            out,
            &[x, gamma, beta],
            Box::new(move |g, _, _| {
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                let mut gx = Tensor::zeros(&g.shape);
                for (k, gv) in g.data.iter().enumerate() {
                    let ch = (k / inner) % c;
                    gg[ch] += gv * xhat[k];
                    gb[ch] += gv;
                    gx.data[k] = gv * mul.data[ch];
                }
                vec![gx, Tensor::new(vec![c], gg), Tensor::new(vec![c], gb)]
            }),
        )
    }
}
