//! Metrics against naive double-loop reference implementations.

use pwt_core::metrics::{calibration_curve, dice, nmse, psnr, ssim};
use pwt_core::Grid;

fn fixture(seed: u32) -> Grid<f64> {
    // Small LCG so the fixture is independent of the library RNG.
    let mut s = seed.wrapping_mul(2_654_435_761).wrapping_add(1);
    Grid::from_fn(16, 16, |_, _| {
        s = s.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
        (s >> 8) as f64 / (1u32 << 24) as f64
    })
}

fn naive_nmse(p: &Grid<f64>, t: &Grid<f64>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..t.rows() {
        for j in 0..t.cols() {
            num += (p[(i, j)] - t[(i, j)]).powi(2);
            den += t[(i, j)].powi(2);
        }
    }
    num / den
}

fn naive_psnr(p: &Grid<f64>, t: &Grid<f64>) -> f64 {
    let mut max = f64::MIN;
    for i in 0..t.rows() {
        for j in 0..t.cols() {
            max = max.max(t[(i, j)]);
        }
    }
    let mut mse = 0.0;
    for i in 0..t.rows() {
        for j in 0..t.cols() {
            mse += (p[(i, j)] - t[(i, j)]).powi(2);
        }
    }
    mse /= (t.rows() * t.cols()) as f64;
    10.0 * (max * max / mse).log10()
}

/// Direct 2D-window SSIM with a non-separable Gaussian.
fn naive_ssim(x: &Grid<f64>, y: &Grid<f64>) -> f64 {
    let mut w = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (a, row) in w.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let r2 = ((a as f64 - 5.0).powi(2) + (b as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5);
            *v = (-r2).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..=x.rows() - 11 {
        for j in 0..=x.cols() - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..11 {
                for b in 0..11 {
                    mx += w[a][b] / total * x[(i + a, j + b)];
                    my += w[a][b] / total * y[(i + a, j + b)];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for a in 0..11 {
                for b in 0..11 {
                    let wv = w[a][b] / total;
                    vx += wv * (x[(i + a, j + b)] - mx).powi(2);
                    vy += wv * (y[(i + a, j + b)] - my).powi(2);
                    cxy += wv * (x[(i + a, j + b)] - mx) * (y[(i + a, j + b)] - my);
                }
            }
            sum += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

fn naive_dice(a: &Grid<bool>, b: &Grid<bool>) -> f64 {
    let (mut inter, mut na, mut nb) = (0.0, 0.0, 0.0);
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            if a[(i, j)] && b[(i, j)] {
                inter += 1.0;
            }
            if a[(i, j)] {
                na += 1.0;
            }
            if b[(i, j)] {
                nb += 1.0;
            }
        }
    }
    2.0 * inter / (na + nb)
}

fn naive_ece(p: &[f64], t: &[f64]) -> f64 {
    let mut ece = 0.0;
    for b in 0..10 {
        let members: Vec<usize> = (0..p.len()).filter(|&k| ((p[k] * 10.0) as usize).min(9) == b).collect();
        if members.is_empty() {
            continue;
        }
        let conf = members.iter().map(|&k| p[k]).sum::<f64>() / members.len() as f64;
        let acc = members.iter().map(|&k| t[k]).sum::<f64>() / members.len() as f64;
        ece += members.len() as f64 / p.len() as f64 * (acc - conf).abs();
    }
    ece
}

#[test]
fn metrics_match_naive_references() {
    for seed in 0..4 {
        let t = fixture(seed);
        let noise = fixture(seed + 100);
        let p = Grid::from_fn(16, 16, |i, j| 0.7 * t[(i, j)] + 0.3 * noise[(i, j)]);
        assert!((nmse(&p, &t).unwrap() - naive_nmse(&p, &t)).abs() < 1e-12);
        assert!((psnr(&p, &t).unwrap() - naive_psnr(&p, &t)).abs() < 1e-9);
        assert!((ssim(&p, &t).unwrap() - naive_ssim(&p, &t)).abs() < 1e-9);
        let (a, b) = (p.map(|v| *v > 0.5), t.map(|v| *v > 0.5));
        assert!((dice(&a, &b).unwrap() - naive_dice(&a, &b)).abs() < 1e-12);
        let truths: Vec<f64> = b.data().iter().map(|&v| v as u8 as f64).collect();
        let curve = calibration_curve(p.data(), &truths, 10).unwrap();
        assert!((curve.ece - naive_ece(p.data(), &truths)).abs() < 1e-12);
    }
}

#[test]
fn checkerboard_inversion_has_low_ssim() {
    let c = Grid::from_fn(16, 16, |i, j| ((i / 2 + j / 2) % 2) as f64);
    let inv = c.map(|v| 1.0 - v);
    let s = ssim(&inv, &c).unwrap();
    assert!(s < 0.5);
    assert!((s - naive_ssim(&inv, &c)).abs() < 1e-9);
}
