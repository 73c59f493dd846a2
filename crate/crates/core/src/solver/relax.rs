//! Relaxation mechanisms on spatial derivatives.
//!
//! Every derivative the solver takes is filtered as
//! `grad / kappa + sum_nu psi_nu`, where each memory variable obeys
//! `dpsi/dt = -(d/kappa + alpha) psi - (d/kappa^2) grad`. Graded at the edges
//! this is a convolutional PML; inside tissue it produces power-law
//! attenuation once `d` and `alpha` are fitted.

use serde::{Deserialize, Serialize};

use crate::grid::Grid;

/// One relaxation mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub kappa: f64,
    pub d: f64,
    pub alpha: f64,
}

impl Mechanism {
    pub const IDENTITY: Mechanism = Mechanism { kappa: 1.0, d: 0.0, alpha: 0.0 };

    pub fn is_identity(&self) -> bool {
        self.kappa == 1.0 && self.d == 0.0
    }

    /// Recursive-convolution coefficients `(a, b)` for one step of `dt`.
    pub fn coefficients(&self, dt: f64) -> (f64, f64) {
        let s = self.d / self.kappa + self.alpha;
        let b = (-s * dt).exp();
        let g = self.d / (self.kappa * self.kappa);
        let a = if s * dt > 1e-12 { g * (-s * dt).exp_m1() / s } else { -g * dt };
        (a, b)
    }
}

/// Advances the memory variables of one location by a step and returns the
/// filtered derivative. All mechanisms share the `kappa` of the first one.
pub fn update_memory(psi: &mut [f64], grad: f64, mechanisms: &[Mechanism], dt: f64) -> f64 {
    let kappa = mechanisms.first().map_or(1.0, |m| m.kappa);
    let mut out = grad / kappa;
    for (p, m) in psi.iter_mut().zip(mechanisms) {
        let (a, b) = m.coefficients(dt);
        *p = b * *p + a * grad;
        out += *p;
    }
    out
}

/// Absorbing-layer profile along one axis, sampled at cell centres and at
/// the staggered faces (face `j` sits between cells `j` and `j + 1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisProfile {
    pub centers: Vec<Mechanism>,
    pub faces: Vec<Mechanism>,
}

impl AxisProfile {
    pub fn identity(n: usize) -> Self {
        Self { centers: vec![Mechanism::IDENTITY; n], faces: vec![Mechanism::IDENTITY; n] }
    }

    /// Cubic-graded layer of `width` cells on both ends of an axis of `n` cells.
    pub fn graded(n: usize, width: usize, dx: f64, c_ref: f64, f_ref: f64) -> Self {
        if width == 0 {
            return Self::identity(n);
        }
        let order = 3.0;
        let len = width as f64 * dx;
        let d_max = -(order + 1.0) * c_ref * PML_REFLECTION.ln() / (2.0 * len);
        let alpha_max = std::f64::consts::PI * f_ref;
        let inner_lo = width as f64 - 0.5;
        let inner_hi = n as f64 - width as f64 - 0.5;
        let at = |x: f64| {
            let depth = (inner_lo - x).max(x - inner_hi).max(0.0);
            let u = (depth / width as f64).min(1.0);
            if u == 0.0 {
                Mechanism::IDENTITY
            } else {
                Mechanism { kappa: 1.0, d: d_max * u.powf(order), alpha: alpha_max * (1.0 - u) }
            }
        };
        Self {
            centers: (0..n).map(|j| at(j as f64)).collect(),
            faces: (0..n).map(|j| at(j as f64 + 0.5)).collect(),
        }
    }
}

/// Design reflection coefficient of the absorbing layer at normal incidence.
const PML_REFLECTION: f64 = 1e-5;

/// Relaxation parameters for the whole grid: absorbing profiles per axis and
/// attenuation mechanisms per tissue class (shared by both axes and both
/// derivative operators).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxParams {
    pub x: Option<AxisProfile>,
    pub y: Option<AxisProfile>,
    /// Indexed by attenuation class; every class has the same length.
    pub tissue: Vec<Vec<Mechanism>>,
    /// Mid-band phase-velocity factor of each class's mechanisms (see
    /// `AttenuationFit::speed_factor`); missing entries count as 1.
    #[serde(default)]
    pub tissue_speed: Vec<f64>,
}

impl RelaxParams {
    /// Plain derivatives everywhere.
    pub fn none() -> Self {
        Self { x: None, y: None, tissue: Vec::new(), tissue_speed: Vec::new() }
    }

    pub fn with_tissue(mut self, tissue: Vec<Vec<Mechanism>>, speed: Vec<f64>) -> Self {
        self.tissue = tissue;
        self.tissue_speed = speed;
        self
    }

    pub(crate) fn speed_factor(&self, class: u8) -> f64 {
        self.tissue_speed.get(class as usize).copied().unwrap_or(1.0)
    }

    pub fn n_tissue_mechanisms(&self) -> usize {
        self.tissue.first().map_or(0, Vec::len)
    }

    pub(crate) fn tissue_at(&self, class: &Grid<u8>, i: usize, j: usize) -> &[Mechanism] {
        self.tissue.get(class[(i, j)] as usize).map_or(&[], Vec::as_slice)
    }
}

/// Mechanisms at an operator location: the absorbing-layer entry followed by
/// the tissue entries.
pub(crate) fn stack(profile: Option<&Mechanism>, tissue: &[Mechanism]) -> Vec<Mechanism> {
    let mut out = Vec::with_capacity(1 + tissue.len());
    let kappa = profile.map_or(1.0, |m| m.kappa);
    if let Some(m) = profile {
        out.push(*m);
    }
    out.extend(tissue.iter().map(|m| Mechanism { kappa, ..*m }));
    out
}

/// Mean of two cells' tissue mechanisms, used on the face between them.
pub(crate) fn face_average(a: &[Mechanism], b: &[Mechanism]) -> Vec<Mechanism> {
    a.iter()
        .zip(b)
        .map(|(x, y)| Mechanism { kappa: 1.0, d: 0.5 * (x.d + y.d), alpha: 0.5 * (x.alpha + y.alpha) })
        .collect()
}

/// Sparse memory-variable storage for one derivative operator. Only locations
/// with a non-trivial mechanism are stored.
#[derive(Clone, Debug, Default)]
pub(crate) struct MemoryOp {
    k: usize,
    idx: Vec<u32>,
    kinv: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    pub psi: Vec<f64>,
}

impl MemoryOp {
    pub fn new(k: usize) -> Self {
        Self { k, ..Default::default() }
    }

    /// Registers the mechanisms of location `idx` (padded with inert entries
    /// up to `k`).
    pub fn push(&mut self, idx: usize, mechs: &[Mechanism], dt: f64) {
        if mechs.iter().all(Mechanism::is_identity) {
            return;
        }
        self.idx.push(idx as u32);
        self.kinv.push(1.0 / mechs.first().map_or(1.0, |m| m.kappa));
        for n in 0..self.k {
            let (a, b) = mechs.get(n).map_or((0.0, 1.0), |m| m.coefficients(dt));
            self.a.push(a);
            self.b.push(b);
            self.psi.push(0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    /// Replaces `grad[idx]` by the filtered derivative at every stored location.
    pub fn apply(&mut self, grad: &mut [f64]) {
        let k = self.k;
        if k == 0 {
            return;
        }
        let coeffs = self.a.chunks_exact(k).zip(self.b.chunks_exact(k));
        let cells = self.idx.iter().zip(&self.kinv).zip(self.psi.chunks_exact_mut(k));
        for (((&idx, &kinv), psi), (a, b)) in cells.zip(coeffs) {
            let g = grad[idx as usize];
            let mut out = g * kinv;
            for ((p, &a), &b) in psi.iter_mut().zip(a).zip(b) {
                *p = b * *p + a * g;
                out += *p;
            }
            grad[idx as usize] = out;
        }
    }

    pub fn reset(&mut self) {
        self.psi.iter_mut().for_each(|p| *p = 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_passes_through() {
        let mut psi = [0.3, -1.0];
        let m = [Mechanism::IDENTITY, Mechanism::IDENTITY];
        let out = update_memory(&mut psi, 2.5, &m, 1e-8);
        assert_eq!(psi, [0.3, -1.0]);
        assert_eq!(out, 2.5 + 0.3 - 1.0);
        let mut none: [f64; 0] = [];
        assert_eq!(update_memory(&mut none, 1.25, &[], 1e-8), 1.25);
    }

    #[test]
    fn constant_gradient_converges_to_kernel_integral() {
        let m = Mechanism { kappa: 1.5, d: 2.0e6, alpha: 3.0e5 };
        let dt = 8e-9;
        let g = 0.7;
        let mut psi = [0.0];
        for _ in 0..20_000 {
            update_memory(&mut psi, g, &[m], dt);
        }
        let s = m.d / m.kappa + m.alpha;
        let expected = -(m.d / (m.kappa * m.kappa)) * g / s;
        assert!((psi[0] - expected).abs() < 1e-12 * expected.abs().max(1.0), "{} vs {expected}", psi[0]);
    }

    #[test]
    fn recursion_matches_direct_convolution() {
        // A piecewise-constant gradient convolved with the closed-form kernel
        // zeta(t) = -(d/kappa^2) exp(-(d/kappa + alpha) t).
        let m = Mechanism { kappa: 1.2, d: 5.0e6, alpha: 1.0e6 };
        let dt = 1e-8;
        let grads: Vec<f64> = (0..60).map(|n| ((n as f64) * 0.37).sin() + 0.2).collect();
        let s = m.d / m.kappa + m.alpha;
        let amp = m.d / (m.kappa * m.kappa);
        let mut psi = [0.0];
        for (n, &g) in grads.iter().enumerate() {
            update_memory(&mut psi, g, &[m], dt);
            // Each past gradient g_k is held over ((k-1) dt, k dt] and the
            // kernel is integrated exactly over that interval.
            let direct: f64 = (0..=n)
                .map(|k| {
                    let t_hi = (n - k) as f64 * dt;
                    let t_lo = t_hi + dt;
                    let integral = ((-s * t_hi).exp() - (-s * t_lo).exp()) / s;
                    -amp * grads[k] * integral
                })
                .sum();
            assert!((psi[0] - direct).abs() < 1e-9 * direct.abs().max(1e-3), "step {n}");
        }
    }

    #[test]
    fn single_step_matches_exponential_integrator() {
        let m = Mechanism { kappa: 2.0, d: 4.0e6, alpha: 0.0 };
        let dt = 8e-9;
        let mut psi = [0.0];
        update_memory(&mut psi, 1.0, &[m], dt);
        let s: f64 = 2.0e6;
        let expected = (4.0e6 / 4.0) * ((-s * dt).exp() - 1.0) / s;
        assert!((psi[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_rate_limit_is_continuous() {
        let tiny = Mechanism { kappa: 1.0, d: 1e-9, alpha: 0.0 };
        let (a, b) = tiny.coefficients(1e-8);
        assert!((a + 1e-9 * 1e-8).abs() < 1e-25);
        assert!((b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn graded_profile() {
        let p = AxisProfile::graded(64, 16, 1e-4, 1540.0, 1e6);
        for j in 16..47 {
            assert!(p.centers[j].is_identity(), "cell {j}");
        }
        for j in 1..16 {
            assert!(p.centers[j - 1].d >= p.centers[j].d);
            assert!(p.faces[j - 1].d >= p.faces[j].d);
        }
        for j in 0..64 {
            assert!((p.centers[j].d - p.centers[63 - j].d).abs() < 1e-9 * p.centers[0].d);
        }
        for j in 0..62 {
            assert!((p.faces[j].d - p.faces[62 - j].d).abs() < 1e-9 * p.centers[0].d);
        }
        assert_eq!(AxisProfile::graded(10, 0, 1e-4, 1540.0, 1e6), AxisProfile::identity(10));
    }
}
