//! Platt scaling of predicted probabilities.

use pwt_core::metrics::calibration_curve;
use pwt_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::tape::{sigmoid, PROB_EPS};

pub const ECE_BINS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlattFit {
    pub a: f64,
    pub b: f64,
    pub ece_before: f64,
    pub ece_after: f64,
}

impl PlattFit {
    pub const IDENTITY: Self = Self { a: 1.0, b: 0.0, ece_before: 0.0, ece_after: 0.0 };

    /// `sigma(a logit(p) + b)`.
    pub fn apply(&self, p: f64) -> f64 {
        sigmoid(self.a * logit(p) + self.b)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (p / (1.0 - p)).ln()
}

/// Mean cross-entropy of `sigma(a z + b)` against `y`, with gradient and
/// Hessian in `(a, b)`.
fn objective(z: &[f64], y: &[f64], a: f64, b: f64) -> (f64, [f64; 2], [f64; 3]) {
    let n = z.len() as f64;
    let (mut f, mut g, mut h) = (0.0, [0.0; 2], [0.0; 3]);
    for (&zi, &yi) in z.iter().zip(y) {
        let s = a * zi + b;
        // log(1 + e^s) - y s, evaluated stably.
        f += s.max(0.0) + (-s.abs()).exp().ln_1p() - yi * s;
        let p = sigmoid(s);
        let r = p - yi;
        g[0] += r * zi;
        g[1] += r;
        let w = p * (1.0 - p);
        h[0] += w * zi * zi;
        h[1] += w * zi;
        h[2] += w;
    }
    (f / n, [g[0] / n, g[1] / n], [h[0] / n, h[1] / n, h[2] / n])
}

/// Fits `(a, b)` by damped Newton iterations on the calibration
/// cross-entropy. Truths above 0.5 count as the positive class.
pub fn platt_calibrate(preds: &[f64], truths: &[f64]) -> Result<PlattFit> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::IncompatibleDimensions(format!("{} predictions for {} truths", preds.len(), truths.len())));
    }
    let y: Vec<f64> = truths.iter().map(|&t| (t > 0.5) as u8 as f64).collect();
    let pos = y.iter().filter(|&&v| v == 1.0).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::CalibrationDegenerate("validation set contains a single class".into()));
    }
    let z: Vec<f64> = preds.iter().map(|&p| logit(p)).collect();
    let (mut a, mut b) = (1.0, 0.0);
    let (mut f, mut g, mut h) = objective(&z, &y, a, b);
    for _ in 0..100 {
        // Small ridge keeps the step defined for (nearly) separable data.
        let (h00, h01, h11) = (h[0] + 1e-12, h[1], h[2] + 1e-12);
        let det = h00 * h11 - h01 * h01;
        let (da, db) = ((h11 * g[0] - h01 * g[1]) / det, (h00 * g[1] - h01 * g[0]) / det);
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-8 {
            let (na, nb) = (a - step * da, b - step * db);
            let (nf, ng, nh) = objective(&z, &y, na, nb);
            if nf <= f {
                accepted = (f - nf) > 1e-15 * f.abs().max(1.0) || (ng[0].abs() + ng[1].abs()) < 1e-12;
                (a, b, f, g, h) = (na, nb, nf, ng, nh);
                break;
            }
            step *= 0.5;
        }
        if !accepted || g[0].abs() + g[1].abs() < 1e-12 {
            break;
        }
    }
    let before = calibration_curve(preds, &y, ECE_BINS)?.ece;
    let calibrated: Vec<f64> = preds.iter().map(|&p| sigmoid(a * logit(p) + b)).collect();
    let after = calibration_curve(&calibrated, &y, ECE_BINS)?.ece;
    Ok(PlattFit { a, b, ece_before: before, ece_after: after })
}
