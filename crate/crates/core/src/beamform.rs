//! Delay-and-sum beamforming and B-mode formation.
//!
//! Output sample `i` of every line corresponds to the on-axis depth
//! `z_i = c (t0 + i / fs) / 2`. Receiver `m` at lateral offset `x_m` from the
//! aperture centre hears that depth `tau_m = (sqrt(z^2 + x_m^2) - z) / c`
//! later, so its contribution is read at fractional sample `i + tau_m fs`
//! with linear interpolation. Reads outside the record contribute zero.

use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::sequence::RfTensor;

/// Log-compressed image in dB, values in `[-dynamic_range, 0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BModeImage {
    pub img: Grid<f64>,
    pub axial_pitch_m: f64,
    pub lateral_pitch_m: f64,
    pub dynamic_range_db: f64,
}

/// Receive delays in seconds of each receiver for an on-axis depth `z`.
pub fn receive_delays(z: f64, offsets: &[f64], c: f64) -> Vec<f64> {
    offsets.iter().map(|&x| ((z * z + x * x).sqrt() - z) / c).collect()
}

/// Depth of output sample `i`.
pub fn sample_depth(rf: &RfTensor, i: usize) -> f64 {
    (0.5 * rf.meta.c_ref * (rf.meta.t0 + i as f64 / rf.meta.fs)).max(0.0)
}

/// Linear interpolation of `trace` at fractional index `pos`; zero outside.
#[inline]
fn interp(trace: &[f64], pos: f64) -> f64 {
    if !(pos >= 0.0) {
        return 0.0;
    }
    let k = pos.floor() as usize;
    if k + 1 >= trace.len() {
        return if k + 1 == trace.len() && pos == k as f64 { trace[k] } else { 0.0 };
    }
    let f = pos - k as f64;
    trace[k] + f * (trace[k + 1] - trace[k])
}

/// Per-receiver delayed traces: `out[(i, m, e)]` is receiver `m` of event `e`
/// read at depth sample `i`. Summing over `m` gives [`das_sum`].
pub fn apply_delays(rf: &RfTensor) -> RfTensor {
    let (t, n_t, n_e) = (rf.n_samples, rf.n_receivers, rf.n_events);
    let mut out = RfTensor::zeros(t, n_t, n_e, rf.meta.clone());
    let fs = rf.meta.fs;
    for m in 0..n_t {
        let x = rf.meta.element_offsets_m.get(m).copied().unwrap_or(0.0);
        let shift: Vec<f64> = (0..t)
            .map(|i| {
                let z = sample_depth(rf, i);
                i as f64 + receive_delays(z, &[x], rf.meta.c_ref)[0] * fs
            })
            .collect();
        for e in 0..n_e {
            let trace = rf.trace(m, e);
            for (i, &pos) in shift.iter().enumerate() {
                out.set(i, m, e, interp(&trace, pos));
            }
        }
    }
    out
}

/// Delay-and-sum: one beamformed line per event (`T x N_e`).
pub fn das_sum(rf: &RfTensor) -> Grid<f64> {
    let delayed = apply_delays(rf);
    Grid::from_fn(rf.n_samples, rf.n_events, |i, e| (0..rf.n_receivers).map(|m| delayed.get(i, m, e)).sum())
}

/// Magnitude of the analytic signal of every column.
pub fn envelope(lines: &Grid<f64>) -> Grid<f64> {
    let (t, n) = (lines.rows(), lines.cols());
    if t == 0 {
        return lines.clone();
    }
    let len = t.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut out = Grid::new(t, n, 0.0);
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for e in 0..n {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(if k < t { lines[(k, e)] } else { 0.0 }, 0.0);
        }
        fwd.process(&mut buf);
        // Keep DC and Nyquist, double positive frequencies, drop negative ones.
        for (k, b) in buf.iter_mut().enumerate().skip(1) {
            if k < len / 2 {
                *b *= 2.0;
            } else if k > len / 2 {
                *b = Complex64::new(0.0, 0.0);
            }
        }
        inv.process(&mut buf);
        for i in 0..t {
            out[(i, e)] = buf[i].norm() / len as f64;
        }
    }
    out
}

/// `20 log10(env / max)` clamped to `[-dynamic_range_db, 0]`. An all-zero
/// envelope maps to the floor everywhere.
pub fn log_compress(env: &Grid<f64>, dynamic_range_db: f64, axial_pitch_m: f64, lateral_pitch_m: f64) -> BModeImage {
    let max = env.data().iter().copied().fold(0.0f64, f64::max);
    let img = env.map(|&v| {
        if max > 0.0 && v > 0.0 {
            (20.0 * (v / max).log10()).clamp(-dynamic_range_db, 0.0)
        } else {
            -dynamic_range_db
        }
    });
    BModeImage { img, axial_pitch_m, lateral_pitch_m, dynamic_range_db }
}

/// Keys cubic convolution weight (a = -0.5).
fn keys(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x.powi(3) - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x.powi(3) - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Sample of `v` at integer index `k`, linearly extrapolated past the ends.
fn extended(v: &[f64], k: isize) -> f64 {
    let n = v.len() as isize;
    if n == 1 {
        return v[0];
    }
    if k < 0 {
        v[0] + k as f64 * (v[1] - v[0])
    } else if k >= n {
        v[(n - 1) as usize] + (k - n + 1) as f64 * (v[(n - 1) as usize] - v[(n - 2) as usize])
    } else {
        v[k as usize]
    }
}

/// 1D cubic resampling by `factor` with pixel-centre alignment.
fn cubic_1d(v: &[f64], factor: usize) -> Vec<f64> {
    (0..v.len() * factor)
        .map(|o| {
            let u = (o as f64 + 0.5) / factor as f64 - 0.5;
            let base = u.floor() as isize;
            (base - 1..=base + 2).map(|k| keys(u - k as f64) * extended(v, k)).sum()
        })
        .collect()
}

/// Separable bicubic interpolation of a grid by `factor` in both axes.
pub fn bicubic(img: &Grid<f64>, factor: usize) -> Grid<f64> {
    assert!(factor >= 1, "upsampling factor must be at least 1");
    if factor == 1 {
        return img.clone();
    }
    let (r, c) = (img.rows(), img.cols());
    let rows_up: Vec<Vec<f64>> = (0..r).map(|i| cubic_1d(img.row(i), factor)).collect();
    let cols_up = c * factor;
    let mut out = Grid::new(r * factor, cols_up, 0.0);
    for j in 0..cols_up {
        let col: Vec<f64> = rows_up.iter().map(|row| row[j]).collect();
        for (i, v) in cubic_1d(&col, factor).into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

/// Display interpolation of a B-mode image; values stay in the dB range.
pub fn upsample_display(img: &BModeImage, factor: usize) -> BModeImage {
    let dr = img.dynamic_range_db;
    BModeImage {
        img: bicubic(&img.img, factor).map(|v| v.clamp(-dr, 0.0)),
        axial_pitch_m: img.axial_pitch_m / factor as f64,
        lateral_pitch_m: img.lateral_pitch_m / factor as f64,
        dynamic_range_db: dr,
    }
}

/// Beamformed, envelope-detected, 60 dB log-compressed image (before display
/// interpolation).
pub fn bmode(rf: &RfTensor) -> BModeImage {
    let env = envelope(&das_sum(rf));
    let lateral = if rf.meta.event_centers_m.len() > 1 {
        (rf.meta.event_centers_m[1] - rf.meta.event_centers_m[0]).abs()
    } else {
        rf.meta.pitch_m
    };
    log_compress(&env, 60.0, rf.meta.c_ref / (2.0 * rf.meta.fs), lateral)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::RfMeta;
    use std::f64::consts::PI;

    fn meta(n_t: usize, n_e: usize, offsets: Vec<f64>) -> RfMeta {
        RfMeta {
            fs: 20e6,
            t0: 1e-6,
            pitch_m: 2e-4,
            f_c: 5e6,
            c_ref: 1540.0,
            element_offsets_m: if offsets.is_empty() { vec![0.0; n_t] } else { offsets },
            event_centers_m: (0..n_e).map(|e| e as f64 * 2e-4).collect(),
            focal_depths_m: vec![0.01; n_e],
            first_event: 0,
        }
    }

    fn random_rf(t: usize, n_t: usize, n_e: usize, seed: u64) -> RfTensor {
        use rand::Rng;
        let mut rng = crate::rng::seeded(seed, 0);
        let offsets = (0..n_t).map(|m| (m as f64 - (n_t as f64 - 1.0) / 2.0) * 2e-4).collect();
        let mut rf = RfTensor::zeros(t, n_t, n_e, meta(n_t, n_e, offsets));
        rf.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        rf
    }

    #[test]
    fn delays_closed_form() {
        assert_eq!(receive_delays(0.01, &[0.0], 1540.0), vec![0.0]);
        let z = 0.004;
        let d = receive_delays(z, &[z], 1540.0)[0];
        assert!((d - z * (2f64.sqrt() - 1.0) / 1540.0).abs() < 1e-18);
        let mut last = f64::INFINITY;
        for k in 0..40 {
            let z = 1e-3 * 1.5f64.powi(k);
            let d = receive_delays(z, &[3e-3], 1540.0)[0];
            assert!(d < last);
            last = d;
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn single_receiver_zero_offset_is_identity() {
        let rf = {
            let mut r = random_rf(64, 1, 3, 1);
            r.meta.element_offsets_m = vec![0.0];
            r
        };
        let lines = das_sum(&rf);
        for i in 0..64 {
            for e in 0..3 {
                assert_eq!(lines[(i, e)], rf.get(i, 0, e));
            }
        }
        assert_eq!(apply_delays(&rf), rf);
    }

    #[test]
    fn identical_traces_sum() {
        let mut rf = RfTensor::zeros(50, 4, 2, meta(4, 2, vec![]));
        for t in 0..50 {
            for m in 0..4 {
                for e in 0..2 {
                    rf.set(t, m, e, (t as f64 * 0.3 + e as f64).sin());
                }
            }
        }
        let lines = das_sum(&rf);
        for t in 0..50 {
            assert!((lines[(t, 1)] - 4.0 * rf.get(t, 0, 1)).abs() < 1e-12);
        }
    }

    #[test]
    fn delayed_sum_matches_das() {
        let rf = random_rf(200, 8, 5, 3);
        let lines = das_sum(&rf);
        let delayed = apply_delays(&rf);
        for i in 0..200 {
            for e in 0..5 {
                let s: f64 = (0..8).map(|m| delayed.get(i, m, e)).sum();
                assert!((s - lines[(i, e)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn das_is_linear() {
        let a = random_rf(120, 6, 3, 4);
        let b = random_rf(120, 6, 3, 5);
        let mut mix = a.clone();
        for k in 0..mix.data.len() {
            mix.data[k] = 2.0 * a.data[k] - 0.7 * b.data[k];
        }
        let (la, lb, lm) = (das_sum(&a), das_sum(&b), das_sum(&mix));
        for k in 0..lm.len() {
            let expect = 2.0 * la.data()[k] - 0.7 * lb.data()[k];
            assert!((lm.data()[k] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn envelope_of_tone() {
        let t = 1000;
        let amp = 2.5;
        let line = Grid::from_fn(t, 1, |i, _| amp * (2.0 * PI * 0.07 * i as f64).sin());
        let env = envelope(&line);
        for i in t / 20..t - t / 20 {
            assert!((env[(i, 0)] / amp - 1.0).abs() < 0.02, "sample {i}: {}", env[(i, 0)]);
            assert!(env[(i, 0)] >= line[(i, 0)].abs() * 0.98);
        }
        let zero = envelope(&Grid::new(32, 2, 0.0));
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let scaled = envelope(&line.map(|v| 3.0 * v));
        for i in 0..t {
            assert!((scaled[(i, 0)] - 3.0 * env[(i, 0)]).abs() < 1e-9);
        }
    }

    #[test]
    fn log_compress_anchors() {
        let env = Grid::from_vec(1, 4, vec![1.0, 0.1, 1e-3, 0.0]).unwrap();
        let img = log_compress(&env, 60.0, 1.0, 1.0).img;
        assert_eq!(img[(0, 0)], 0.0);
        assert!((img[(0, 1)] + 20.0).abs() < 1e-12);
        assert!((img[(0, 2)] + 60.0).abs() < 1e-12);
        assert_eq!(img[(0, 3)], -60.0);
        let all_zero = log_compress(&Grid::new(3, 3, 0.0), 60.0, 1.0, 1.0);
        assert!(all_zero.img.data().iter().all(|&v| v == -60.0));
        let scaled = log_compress(&env.map(|v| v * 17.0), 60.0, 1.0, 1.0).img;
        for k in 0..4 {
            assert!((scaled.data()[k] - img.data()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn bicubic_reproduces_ramps() {
        let img = Grid::from_fn(7, 9, |i, j| 0.5 + 1.5 * i as f64 - 0.25 * j as f64 + 0.1 * (i * j) as f64);
        let up = bicubic(&img, 4);
        assert_eq!((up.rows(), up.cols()), (28, 36));
        for o in 0..28 {
            for p in 0..36 {
                let u = (o as f64 + 0.5) / 4.0 - 0.5;
                let v = (p as f64 + 0.5) / 4.0 - 0.5;
                let expect = 0.5 + 1.5 * u - 0.25 * v + 0.1 * u * v;
                assert!((up[(o, p)] - expect).abs() < 1e-10);
            }
        }
        assert_eq!(bicubic(&img, 1), img);
        let flat = bicubic(&Grid::new(5, 5, -12.0), 4);
        assert!(flat.data().iter().all(|&v| (v + 12.0).abs() < 1e-12));
    }
}
