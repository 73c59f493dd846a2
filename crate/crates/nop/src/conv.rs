//! 2D convolution (im2col + GEMM), stride-2 transposed convolution and
//! bilinear resizing.

use crate::tape::{Tape, Var};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel larger than padded input");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Self { cin, h, w, k, stride, pad, ho, wo }
    }

    /// Calls `f(dst_row, src, stride, oj_range)` for every
    /// (c, ki, kj, oi) row segment reading inside the input; `src` is the
    /// input index read by the first column of the range.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, std::ops::Range<usize>)) {
        let g = *self;
        // Output columns whose input column is inside [0, w).
        let first = |kj: usize| (g.pad.saturating_sub(kj)).div_ceil(g.stride);
        let last = |kj: usize| {
            // largest oj with oj*stride + kj - pad <= w - 1, plus one
            let lim = (g.w + g.pad) as isize - 1 - kj as isize;
            if lim < 0 { 0 } else { ((lim as usize) / g.stride + 1).min(g.wo) }
        };
        for c in 0..g.cin {
            for ki in 0..g.k {
                for kj in 0..g.k {
                    let (j0, j1) = (first(kj), last(kj));
                    let row_base = ((c * g.k + ki) * g.k + kj) * g.ho * g.wo;
                    for oi in 0..g.ho {
                        let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                        if ii < 0 || ii as usize >= g.h || j0 >= j1 {
                            continue;
                        }
                        let src = (c * g.h + ii as usize) * g.w;
                        // input column of j0
                        let col0 = j0 * g.stride + kj - g.pad;
                        f(row_base + oi * g.wo, src + col0, g.stride, j0..j1);
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.cin * self.k * self.k * self.ho * self.wo];
        self.for_each_run(|dst, src, stride, js| {
            let n = js.len();
            let out = &mut cols[dst + js.start..dst + js.end];
            if stride == 1 {
                out.copy_from_slice(&x[src..src + n]);
            } else {
                out.iter_mut().enumerate().for_each(|(t, v)| *v = x[src + t * stride]);
            }
        });
        cols
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        self.for_each_run(|dst, src, stride, js| {
            let inp = &cols[dst + js.start..dst + js.end];
            if stride == 1 {
                dx[src..src + inp.len()].iter_mut().zip(inp).for_each(|(d, v)| *d += v);
            } else {
                inp.iter().enumerate().for_each(|(t, v)| dx[src + t * stride] += v);
            }
        });
    }
}

impl Tape {
    /// Cross-correlation of `x` (`[B, C_in, H, W]`) with `w`
    /// (`[C_out, C_in, k, k]`), zero padding `pad`, stride `stride`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let (xt, wt) = (self.value(x), self.value(w));
        let [b, cin, h, wd] = xt.shape[..] else { panic!("conv2d input must be 4D, got {:?}", xt.shape) };
        let [cout, wcin, k, k2] = wt.shape[..] else { panic!("conv2d weight must be 4D") };
        assert!(wcin == cin && k == k2, "conv2d weight {:?} does not fit input {:?}", wt.shape, xt.shape);
        let geo = Geometry::new(cin, h, wd, k, stride, pad);
        let (kk, npix) = (cin * k * k, geo.ho * geo.wo);
        let mut out = Tensor::zeros(&[b, cout, geo.ho, geo.wo]);
        let mut all_cols = Vec::with_capacity(b);
        for bi in 0..b {
            let cols = geo.im2col(&xt.data[bi * cin * h * wd..(bi + 1) * cin * h * wd]);
            gemm(cout, kk, npix, &wt.data, false, &cols, false, &mut out.data[bi * cout * npix..(bi + 1) * cout * npix], 1.0, 0.0);
            all_cols.push(cols);
        }
        self.push(
            out,
            &[x, w],
            Box::new(move |g, _, ins| {
                let (xt, wt) = (ins[0], ins[1]);
                let mut gx = Tensor::zeros(&xt.shape);
                let mut gw = Tensor::zeros(&wt.shape);
                let mut dcols = vec![0.0; kk * npix];
                for (bi, cols) in all_cols.iter().enumerate() {
                    let gs = &g.data[bi * cout * npix..(bi + 1) * cout * npix];
                    gemm(cout, npix, kk, gs, false, cols, true, &mut gw.data, 1.0, 1.0);
                    gemm(kk, cout, npix, &wt.data, true, gs, false, &mut dcols, 1.0, 0.0);
                    geo.col2im(&dcols, &mut gx.data[bi * cin * h * wd..(bi + 1) * cin * h * wd]);
                }
                vec![gx, gw]
            }),
        )
    }

    /// Transposed convolution with a 2x2 kernel and stride 2 (exact 2x
    /// upsampling): `x` is `[B, C_in, H, W]`, `w` is `[C_in, C_out, 2, 2]`.
    pub fn conv_transpose2x2(&mut self, x: Var, w: Var) -> Var {
        let (xt, wt) = (self.value(x), self.value(w));
        let [b, cin, h, wd] = xt.shape[..] else { panic!("conv_transpose input must be 4D") };
        let [wcin, cout, 2, 2] = wt.shape[..] else { panic!("conv_transpose weight must be [C_in, C_out, 2, 2]") };
        assert_eq!(wcin, cin, "conv_transpose channel mismatch");
        let (ho, wo) = (2 * h, 2 * wd);
        let mut out = Tensor::zeros(&[b, cout, ho, wo]);
        let widx = move |c: usize, o: usize, a: usize, d: usize| ((c * cout + o) * 2 + a) * 2 + d;
        for bi in 0..b {
            for c in 0..cin {
                for i in 0..h {
                    for j in 0..wd {
                        let v = xt.data[((bi * cin + c) * h + i) * wd + j];
                        for o in 0..cout {
                            for a in 0..2 {
                                for d in 0..2 {
                                    out.data[((bi * cout + o) * ho + 2 * i + a) * wo + 2 * j + d] += v * wt.data[widx(c, o, a, d)];
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push(
            out,
            &[x, w],
            Box::new(move |g, _, ins| {
                let (xt, wt) = (ins[0], ins[1]);
                let mut gx = Tensor::zeros(&xt.shape);
                let mut gw = Tensor::zeros(&wt.shape);
                for bi in 0..b {
                    for c in 0..cin {
                        for i in 0..h {
                            for j in 0..wd {
                                let xi = ((bi * cin + c) * h + i) * wd + j;
                                let mut acc = 0.0;
                                for o in 0..cout {
                                    for a in 0..2 {
                                        for d in 0..2 {
                                            let gv = g.data[((bi * cout + o) * ho + 2 * i + a) * wo + 2 * j + d];
                                            acc += gv * wt.data[widx(c, o, a, d)];
                                            gw.data[widx(c, o, a, d)] += gv * xt.data[xi];
                                        }
                                    }
                                }
                                gx.data[xi] = acc;
                            }
                        }
                    }
                }
                vec![gx, gw]
            }),
        )
    }
}

/// Bilinear resize of `[B, C, H, W]` to `[B, C, ho, wo]` with pixel-centre
/// alignment and edge clamping.
pub fn resize_bilinear(x: &Tensor, ho: usize, wo: usize) -> Tensor {
    let [b, c, h, w] = x.shape[..] else { panic!("resize needs a 4D tensor") };
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let u = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = u.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, u - lo as f64)
            })
            .collect()
    };
    let (ti, tj) = (taps(h, ho), taps(w, wo));
    let mut out = Tensor::zeros(&[b, c, ho, wo]);
    for p in 0..b * c {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        for (i, &(i0, i1, fi)) in ti.iter().enumerate() {
            for (j, &(j0, j1, fj)) in tj.iter().enumerate() {
                let top = src[i0 * w + j0] * (1.0 - fj) + src[i0 * w + j1] * fj;
                let bot = src[i1 * w + j0] * (1.0 - fj) + src[i1 * w + j1] * fj;
                out.data[(p * ho + i) * wo + j] = top * (1.0 - fi) + bot * fi;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let [b, cin, h, wd] = x.shape[..] else { unreachable!() };
        let [cout, _, k, _] = w.shape[..] else { unreachable!() };
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[b, cout, ho, wo]);
        for bi in 0..b {
            for o in 0..cout {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut s = 0.0;
                        for c in 0..cin {
                            for a in 0..k {
                                for d in 0..k {
                                    let (ii, jj) = ((i * stride + a) as isize - pad as isize, (j * stride + d) as isize - pad as isize);
                                    if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < wd {
                                        s += x.data[((bi * cin + c) * h + ii as usize) * wd + jj as usize]
                                            * w.data[((o * cin + c) * k + a) * k + d];
                                    }
                                }
                            }
                        }
                        out.data[((bi * cout + o) * ho + i) * wo + j] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = Tensor::new(vec![2, 3, 5, 6], (0..180).map(|v| ((v * 37) % 11) as f64 - 5.0).collect());
        let w = Tensor::new(vec![4, 3, 3, 3], (0..108).map(|v| ((v * 13) % 7) as f64 * 0.1 - 0.3).collect());
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
            let mut t = Tape::new();
            let (xv, wv) = (t.leaf(x.clone()), t.leaf(w.clone()));
            let y = t.conv2d(xv, wv, stride, pad);
            assert!(t.value(y).max_abs_diff(&naive_conv(&x, &w, stride, pad)) < 1e-12);
        }
    }

    #[test]
    fn transpose_conv_inverts_shape() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let w = t.leaf(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let y = t.conv_transpose2x2(x, w);
        assert_eq!(t.shape(y), &[1, 1, 4, 4]);
        assert_eq!(t.value(y).data[..4], [1.0, 0.0, 2.0, 0.0]);
        assert_eq!(t.value(y).data[4..8], [0.0, 1.0, 0.0, 2.0]);
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let x = Tensor::new(vec![1, 1, 3, 4], (0..12).map(|v| v as f64).collect());
        assert_eq!(resize_bilinear(&x, 3, 4), x);
        let c = Tensor::full(&[1, 2, 5, 5], 0.25);
        assert!(resize_bilinear(&c, 8, 3).data.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
