//! Fitting relaxation mechanisms to a power-law attenuation.
//!
//! The model is the discrete-time response of the memory-variable recursion:
//! a derivative filtered by mechanisms `(a_nu, b_nu)` becomes
//! `F(w) = 1 + sum a_nu / (1 - b_nu e^{i w dt})`, and with both derivative
//! operators filtered the leapfrog dispersion relation gives
//! `k = W / (c F)` with `W = 2 sin(w dt / 2) / dt`. The attenuation is `Im k`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::relax::Mechanism;
use crate::error::{Error, Result};

/// Fitted mechanisms and the worst absolute error over the band relative to
/// the mid-band target.
///
/// Relaxation slows waves below the relaxation frequencies. `speed_factor`
/// is the resulting mid-band phase velocity relative to the unfiltered
/// scheme; the solver divides the nominal sound speed by it so the phase
/// velocity at band centre stays nominal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttenuationFit {
    pub mechanisms: Vec<Mechanism>,
    pub residual: f64,
    pub speed_factor: f64,
}

const DB_PER_NEPER: f64 = 8.685_889_638_065_036;
const N_FREQ: usize = 24;
const MAX_RESIDUAL: f64 = 0.15;

/// Power-law attenuation in Np/m at `f` Hz for `alpha0` dB/(cm MHz^y).
pub fn attenuation_np_per_m(alpha0: f64, y: f64, f: f64) -> f64 {
    alpha0 * (f / 1e6).powf(y) * 100.0 / DB_PER_NEPER
}

/// Complex wavenumber of the discrete model at `f` in a medium of sound
/// speed `c`, with the lossless leapfrog frequency `W` alongside.
fn model_k(mechanisms: &[Mechanism], f: f64, c: f64, dt: f64) -> (Complex64, f64) {
    let w = 2.0 * PI * f;
    let z = Complex64::from_polar(1.0, w * dt);
    let mut big_f = Complex64::new(1.0, 0.0);
    for m in mechanisms {
        let (a, b) = m.coefficients(dt);
        big_f += a / (1.0 - b * z);
    }
    let omega = 2.0 * (0.5 * w * dt).sin() / dt;
    (omega / (c * big_f), omega)
}

/// Attenuation in Np/m that the discrete model with `mechanisms` produces at
/// frequency `f` in a medium of sound speed `c`.
pub fn model_attenuation(mechanisms: &[Mechanism], f: f64, c: f64, dt: f64) -> f64 {
    model_k(mechanisms, f, c, dt).0.im
}

fn band_frequencies(band: (f64, f64)) -> Vec<f64> {
    (0..N_FREQ).map(|k| band.0 + (band.1 - band.0) * k as f64 / (N_FREQ - 1) as f64).collect()
}

/// Parameters are `ln d` and `ln alpha` per mechanism.
fn mechanisms_from(theta: &[f64]) -> Vec<Mechanism> {
    theta.chunks(2).map(|p| Mechanism { kappa: 1.0, d: p[0].exp(), alpha: p[1].exp() }).collect()
}

/// Phase-velocity change of the model relative to the lossless scheme.
fn model_dispersion(mechanisms: &[Mechanism], f: f64, c: f64, dt: f64) -> f64 {
    let (k, omega) = model_k(mechanisms, f, c, dt);
    omega / (c * k.re) - 1.0
}

/// Relative attenuation errors followed by the phase-velocity shifts. The
/// second block only keeps the fit away from solutions that reach the
/// attenuation by slowing the wave drastically.
fn residuals(theta: &[f64], freqs: &[f64], target: &[f64], c: f64, dt: f64) -> Vec<f64> {
    let mechs = mechanisms_from(theta);
    let att = freqs.iter().zip(target).map(|(&f, &t)| model_attenuation(&mechs, f, c, dt) / t - 1.0);
    let disp = freqs.iter().map(|&f| DISPERSION_WEIGHT * model_dispersion(&mechs, f, c, dt));
    att.chain(disp).collect()
}

const DISPERSION_WEIGHT: f64 = 1.0;

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Solves the small dense system `a x = b` in place by Gaussian elimination
/// with partial pivoting. Returns `None` when singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Best non-negative `d` per mechanism for fixed relaxation rates, using the
/// small-`d` linearisation of the model.
fn linear_start(alphas: &[f64], freqs: &[f64], target: &[f64], c: f64, dt: f64) -> Option<Vec<f64>> {
    let probe = 1.0;
    let basis: Vec<Vec<f64>> = alphas
        .iter()
        .map(|&al| {
            let m = [Mechanism { kappa: 1.0, d: probe, alpha: al }];
            freqs.iter().zip(target).map(|(&f, &t)| model_attenuation(&m, f, c, dt) / probe / t).collect()
        })
        .collect();
    let n = alphas.len();
    let ata: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| basis[i].iter().zip(&basis[j]).map(|(x, y)| x * y).sum()).collect()).collect();
    let atb: Vec<f64> = (0..n).map(|i| basis[i].iter().sum()).collect();
    let d = solve(ata, atb)?;
    Some(d.into_iter().map(|v| v.max(1e-3)).collect())
}

fn levenberg_marquardt(mut theta: Vec<f64>, freqs: &[f64], target: &[f64], c: f64, dt: f64) -> Vec<f64> {
    let n = theta.len();
    let mut r = residuals(&theta, freqs, target, c, dt);
    let mut cost = sum_sq(&r);
    let mut lambda = 1e-3;
    for _ in 0..300 {
        let eps = 1e-6;
        let jac: Vec<Vec<f64>> = (0..n)
            .map(|p| {
                let mut t = theta.clone();
                t[p] += eps;
                let rp = residuals(&t, freqs, target, c, dt);
                rp.iter().zip(&r).map(|(a, b)| (a - b) / eps).collect()
            })
            .collect();
        let jtj: Vec<Vec<f64>> =
            (0..n).map(|i| (0..n).map(|k| jac[i].iter().zip(&jac[k]).map(|(x, y)| x * y).sum()).collect()).collect();
        let jtr: Vec<f64> = (0..n).map(|i| -jac[i].iter().zip(&r).map(|(x, y)| x * y).sum::<f64>()).collect();
        let mut improved = false;
        for _ in 0..20 {
            let mut damped = jtj.clone();
            for (i, row) in damped.iter_mut().enumerate() {
                row[i] += lambda * (jtj[i][i] + 1e-12);
            }
            let Some(delta) = solve(damped, jtr.clone()) else {
                lambda *= 10.0;
                continue;
            };
            let cand: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + d.clamp(-2.0, 2.0)).collect();
            let rc = residuals(&cand, freqs, target, c, dt);
            let cc = sum_sq(&rc);
            if cc.is_finite() && cc < cost {
                let gain = (cost - cc) / cost.max(1e-300);
                theta = cand;
                r = rc;
                cost = cc;
                lambda = (lambda * 0.3).max(1e-12);
                improved = gain > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    theta
}

/// Fits `n_relax` mechanisms so the plane-wave attenuation in a medium of
/// sound speed `c` matches `alpha0 f^y` over `band` (Hz).
pub fn fit_attenuation(
    alpha0: f64,
    y: f64,
    band: (f64, f64),
    n_relax: usize,
    c: f64,
    dt: f64,
) -> Result<AttenuationFit> {
    if !(1..=3).contains(&n_relax) {
        return Err(Error::InvalidConfig(format!("n_relax {n_relax} not in 1..=3")));
    }
    if !(band.0 > 0.0 && band.1 > band.0 && band.1 < 0.5 / dt) {
        return Err(Error::InvalidConfig(format!("band {:?} Hz is empty or above Nyquist", band)));
    }
    if !(alpha0 >= 0.0 && y > 0.0) {
        return Err(Error::InvalidConfig("attenuation law must be non-negative".into()));
    }
    if alpha0 == 0.0 {
        return Ok(AttenuationFit {
            mechanisms: vec![Mechanism { kappa: 1.0, d: 0.0, alpha: 0.0 }; n_relax],
            residual: 0.0,
            speed_factor: 1.0,
        });
    }
    let freqs = band_frequencies(band);
    let target: Vec<f64> = freqs.iter().map(|&f| attenuation_np_per_m(alpha0, y, f)).collect();

    // Candidate relaxation rates, log-spaced around the band.
    let w_lo = 2.0 * PI * band.0;
    let w_hi = 2.0 * PI * band.1;
    let grid: Vec<f64> = (0..14).map(|k| 0.02 * w_lo * (50.0 * w_hi / (0.02 * w_lo)).powf(k as f64 / 13.0)).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut pick = vec![0usize; n_relax];
    loop {
        if pick.windows(2).all(|w| w[0] < w[1]) {
            let alphas: Vec<f64> = pick.iter().map(|&k| grid[k]).collect();
            if let Some(d) = linear_start(&alphas, &freqs, &target, c, dt) {
                let theta: Vec<f64> = d.iter().zip(&alphas).flat_map(|(d, a)| [d.ln(), a.ln()]).collect();
                let cost = sum_sq(&residuals(&theta, &freqs, &target, c, dt));
                if cost.is_finite() && best.as_ref().is_none_or(|b| cost < b.0) {
                    best = Some((cost, theta));
                }
            }
        }
        // Odometer over index tuples.
        let mut k = 0;
        while k < n_relax {
            pick[k] += 1;
            if pick[k] < grid.len() {
                break;
            }
            pick[k] = 0;
            k += 1;
        }
        if k == n_relax {
            break;
        }
    }
    let (_, theta) = best.ok_or(Error::AttenuationFitFailed { residual: f64::INFINITY })?;
    let theta = levenberg_marquardt(theta, &freqs, &target, c, dt);
    let mechanisms = mechanisms_from(&theta);
    let mid = attenuation_np_per_m(alpha0, y, 0.5 * (band.0 + band.1));
    let residual = freqs
        .iter()
        .zip(&target)
        .map(|(&f, &t)| (model_attenuation(&mechanisms, f, c, dt) - t).abs())
        .fold(0.0, f64::max)
        / mid;
    if !(residual <= MAX_RESIDUAL) {
        return Err(Error::AttenuationFitFailed { residual });
    }
    let speed_factor = 1.0 + model_dispersion(&mechanisms, 0.5 * (band.0 + band.1), c, dt);
    Ok(AttenuationFit { mechanisms, residual, speed_factor })
}
