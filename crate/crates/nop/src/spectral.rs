//! Truncated-mode spectral convolution along the last axis.
//!
//! For `x` of shape `[N, C_in, L]` the forward real DFT is taken on the first
//! `M` modes only, mixed per mode by complex weights `W[k, c, o]`, and brought
//! back with the inverse real DFT (higher modes are zero). The transforms are
//! evaluated directly as small dense products: `M` is a few dozen and the
//! dense form keeps the backward pass exact and simple.

use std::f64::consts::PI;

use crate::tape::{Tape, Var};
use crate::tensor::{gemm, Tensor};

/// Largest admissible mode count for an axis of length `l`.
pub fn max_modes(l: usize) -> usize {
    l / 2 + 1
}

struct Basis {
    /// `cos(2 pi k l / L)`, `[M, L]`.
    cos: Vec<f64>,
    sin: Vec<f64>,
    /// Inverse weights `alpha_k / L`.
    inv: Vec<f64>,
}

impl Basis {
    fn new(m: usize, l: usize) -> Self {
        let mut cos = vec![0.0; m * l];
        let mut sin = vec![0.0; m * l];
        for k in 0..m {
            for j in 0..l {
                // Reduce the phase index first so large k*j stay exact.
                let a = 2.0 * PI * ((k * j) % l) as f64 / l as f64;
                cos[k * l + j] = a.cos();
                sin[k * l + j] = a.sin();
            }
        }
        let inv = (0..m)
            .map(|k| {
                let edge = k == 0 || (l % 2 == 0 && k == l / 2);
                (if edge { 1.0 } else { 2.0 }) / l as f64
            })
            .collect();
        Self { cos, sin, inv }
    }
}

fn scale_modes(y: &mut [f64], inv: &[f64]) {
    for row in y.chunks_exact_mut(inv.len()) {
        row.iter_mut().zip(inv).for_each(|(v, s)| *v *= s);
    }
}

impl Tape {
    /// Spectral convolution of `x` (`[N, C_in, L]`) with real and imaginary
    /// weight parts `wr`, `wi` (`[M, C_in, C_out]`); returns `[N, C_out, L]`.
    pub fn spectral_conv(&mut self, x: Var, wr: Var, wi: Var) -> Var {
        let (xt, wrt, wit) = (self.value(x), self.value(wr), self.value(wi));
        let [n, cin, l] = xt.shape[..] else { panic!("spectral_conv input must be [N, C, L], got {:?}", xt.shape) };
        let [m, wcin, cout] = wrt.shape[..] else { panic!("spectral weights must be [M, C_in, C_out]") };
        assert_eq!(wrt.shape, wit.shape, "real and imaginary weights differ in shape");
        assert_eq!(wcin, cin, "spectral weights expect {wcin} channels, input has {cin}");
        assert!(m <= max_modes(l), "{m} modes exceed the {} available on length {l}", max_modes(l));
        let basis = Basis::new(m, l);
        let rows = n * cin;

        // X = x F^T: real part x cos^T, imaginary part -x sin^T, each [N*C_in, M].
        let mut xr = vec![0.0; rows * m];
        let mut xi = vec![0.0; rows * m];
        gemm(rows, l, m, &xt.data, false, &basis.cos, true, &mut xr, 1.0, 0.0);
        gemm(rows, l, m, &xt.data, false, &basis.sin, true, &mut xi, -1.0, 0.0);

        let mut yr = vec![0.0; n * cout * m];
        let mut yi = vec![0.0; n * cout * m];
        for s in 0..n {
            for c in 0..cin {
                let row = (s * cin + c) * m;
                for k in 0..m {
                    let (ar, ai) = (xr[row + k], xi[row + k]);
                    let w0 = (k * cin + c) * cout;
                    for o in 0..cout {
                        let (br, bi) = (wrt.data[w0 + o], wit.data[w0 + o]);
                        yr[(s * cout + o) * m + k] += ar * br - ai * bi;
                        yi[(s * cout + o) * m + k] += ar * bi + ai * br;
                    }
                }
            }
        }
        // y = (alpha/L) (Yr cos - Yi sin).
        scale_modes(&mut yr, &basis.inv);
        scale_modes(&mut yi, &basis.inv);
        let mut out = Tensor::zeros(&[n, cout, l]);
        gemm(n * cout, m, l, &yr, false, &basis.cos, false, &mut out.data, 1.0, 0.0);
        gemm(n * cout, m, l, &yi, false, &basis.sin, false, &mut out.data, -1.0, 1.0);

        self.push(
            out,
            &[x, wr, wi],
            Box::new(move |g, _, ins| {
                let (wrt, wit) = (ins[1], ins[2]);
                // dY = (alpha/L) [g cos^T, -g sin^T].
                let mut dyr = vec![0.0; n * cout * m];
                let mut dyi = vec![0.0; n * cout * m];
                gemm(n * cout, l, m, &g.data, false, &basis.cos, true, &mut dyr, 1.0, 0.0);
                gemm(n * cout, l, m, &g.data, false, &basis.sin, true, &mut dyi, -1.0, 0.0);
                scale_modes(&mut dyr, &basis.inv);
                scale_modes(&mut dyi, &basis.inv);

                let mut gwr = Tensor::zeros(&wrt.shape);
                let mut gwi = Tensor::zeros(&wit.shape);
                let mut dxr = vec![0.0; rows * m];
                let mut dxi = vec![0.0; rows * m];
                for s in 0..n {
                    for c in 0..cin {
                        let row = (s * cin + c) * m;
                        for k in 0..m {
                            let (ar, ai) = (xr[row + k], xi[row + k]);
                            let w0 = (k * cin + c) * cout;
                            let (mut sr, mut si) = (0.0, 0.0);
                            for o in 0..cout {
                                let (gr, gi) = (dyr[(s * cout + o) * m + k], dyi[(s * cout + o) * m + k]);
                                let (br, bi) = (wrt.data[w0 + o], wit.data[w0 + o]);
                                gwr.data[w0 + o] += ar * gr + ai * gi;
                                gwi.data[w0 + o] += -ai * gr + ar * gi;
                                sr += br * gr + bi * gi;
                                si += -bi * gr + br * gi;
                            }
                            dxr[row + k] = sr;
                            dxi[row + k] = si;
                        }
                    }
                }
                // dx = dXr cos - dXi sin.
                let mut gx = Tensor::zeros(&[n, cin, l]);
                gemm(rows, m, l, &dxr, false, &basis.cos, false, &mut gx.data, 1.0, 0.0);
                gemm(rows, m, l, &dxi, false, &basis.sin, false, &mut gx.data, -1.0, 1.0);
                vec![gx, gwr, gwi]
            }),
        )
    }
}
