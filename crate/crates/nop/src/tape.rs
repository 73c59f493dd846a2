//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its value and a backward rule that
//! maps the gradient of the node to gradients of its inputs. `backward` walks
//! the tape once in reverse.

use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type Backward = Box<dyn Fn(&Tensor, &Tensor, &[&Tensor]) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<Backward>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

/// Smallest probability admitted by the log losses.
pub const PROB_EPS: f64 = 1e-7;

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf (input or parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), backward: None });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, parents: &[Var], backward: Backward) -> Var {
        self.nodes.push(Node { value, parents: parents.iter().map(|v| v.0).collect(), backward: Some(backward) });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Back-propagates from the scalar `root`. Gradients are then available
    /// through [`Tape::grad`].
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::new(self.value(root).shape.clone(), vec![1.0]));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Some(bw) = &node.backward {
                let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
                let pg = bw(&g, &node.value, &inputs);
                for (&p, gp) in node.parents.iter().zip(pg) {
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&gp),
                        slot => *slot = Some(gp),
                    }
                }
            }
            grads[id] = Some(g);
        }
        self.grads = grads;
    }

    /// Gradient of the last `backward` root with respect to `v` (zeros if `v`
    /// did not influence it).
    pub fn grad(&self, v: Var) -> Tensor {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(&self.value(v).shape),
        }
    }

    // ---- elementwise -------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape, y.shape, "add shape mismatch");
        let out = Tensor::new(x.shape.clone(), x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect());
        self.push(out, &[a, b], Box::new(|g, _, _| vec![g.clone(), g.clone()]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape, y.shape, "sub shape mismatch");
        let out = Tensor::new(x.shape.clone(), x.data.iter().zip(&y.data).map(|(p, q)| p - q).collect());
        self.push(out, &[a, b], Box::new(|g, _, _| vec![g.clone(), g.map(|v| -v)]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape, y.shape, "mul shape mismatch");
        let out = Tensor::new(x.shape.clone(), x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect());
        self.push(
            out,
            &[a, b],
            Box::new(|g, _, ins| {
                let ga = g.data.iter().zip(&ins[1].data).map(|(g, y)| g * y).collect();
                let gb = g.data.iter().zip(&ins[0].data).map(|(g, x)| g * x).collect();
                vec![Tensor::new(g.shape.clone(), ga), Tensor::new(g.shape.clone(), gb)]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, &[a], Box::new(move |g, _, _| vec![g.map(|v| v * s)]))
    }

    /// `a - c` for a constant tensor `c`.
    pub fn sub_const(&mut self, a: Var, c: &Tensor) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape, c.shape, "sub_const shape mismatch");
        let out = Tensor::new(x.shape.clone(), x.data.iter().zip(&c.data).map(|(p, q)| p - q).collect());
        self.push(out, &[a], Box::new(|g, _, _| vec![g.clone()]))
    }

    /// `|a|`, with subgradient 0 at 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(
            out,
            &[a],
            Box::new(|g, _, ins| {
                let d = g.data.iter().zip(&ins[0].data).map(|(g, x)| g * x.signum() * (*x != 0.0) as u8 as f64);
                vec![Tensor::new(g.shape.clone(), d.collect())]
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(
            out,
            &[a],
            Box::new(|g, y, _| {
                let d = g.data.iter().zip(&y.data).map(|(g, y)| g * y * (1.0 - y));
                vec![Tensor::new(g.shape.clone(), d.collect())]
            }),
        )
    }

    /// GELU, tanh form.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(
            out,
            &[a],
            Box::new(|g, _, ins| {
                let d = g.data.iter().zip(&ins[0].data).map(|(g, &x)| g * gelu_grad(x));
                vec![Tensor::new(g.shape.clone(), d.collect())]
            }),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let x = self.value(a);
        let old = x.shape.clone();
        let out = x.clone().reshaped(shape);
        self.push(out, &[a], Box::new(move |g, _, _| vec![g.clone().reshaped(&old)]))
    }

    // ---- channel operations (axis 1 is the channel axis) --------------------

    /// Adds `bias[c]` to every element of channel `c` of `x` (`[B, C, ...]`).
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Var {
        let (xt, bt) = (self.value(x), self.value(bias));
        let (b, c) = (xt.shape[0], xt.shape[1]);
        assert_eq!(bt.data.len(), c, "bias length differs from channel count");
        let inner = xt.len() / (b * c).max(1);
        let mut out = xt.clone();
        for (k, v) in out.data.iter_mut().enumerate() {
            *v += bt.data[(k / inner) % c];
        }
        self.push(
            out,
            &[x, bias],
            Box::new(move |g, _, _| {
                let mut gb = vec![0.0; c];
                for (k, v) in g.data.iter().enumerate() {
                    gb[(k / inner) % c] += v;
                }
                vec![g.clone(), Tensor::new(vec![c], gb)]
            }),
        )
    }

    /// Channel mixing `y[b, o, n] = sum_c w[c, o] x[b, c, n]` for `x` of
    /// shape `[B, C_in, ...]` and `w` of shape `[C_in, C_out]`.
    pub fn channel_mix(&mut self, x: Var, w: Var) -> Var {
        let (xt, wt) = (self.value(x), self.value(w));
        let (b, cin) = (xt.shape[0], xt.shape[1]);
        assert_eq!(wt.shape[0], cin, "channel_mix weight rows differ from input channels");
        let cout = wt.shape[1];
        let n = xt.len() / (b * cin).max(1);
        let mut shape = xt.shape.clone();
        shape[1] = cout;
        let mut out = Tensor::zeros(&shape);
        for bi in 0..b {
            let xs = &xt.data[bi * cin * n..(bi + 1) * cin * n];
            let ys = &mut out.data[bi * cout * n..(bi + 1) * cout * n];
            gemm(cout, cin, n, &wt.data, true, xs, false, ys, 1.0, 0.0);
        }
        self.push(
            out,
            &[x, w],
            Box::new(move |g, _, ins| {
                let (xt, wt) = (ins[0], ins[1]);
                let mut gx = Tensor::zeros(&xt.shape);
                let mut gw = Tensor::zeros(&wt.shape);
                for bi in 0..b {
                    let gs = &g.data[bi * cout * n..(bi + 1) * cout * n];
                    let xs = &xt.data[bi * cin * n..(bi + 1) * cin * n];
                    gemm(cin, cout, n, &wt.data, false, gs, false, &mut gx.data[bi * cin * n..(bi + 1) * cin * n], 1.0, 0.0);
                    gemm(cin, n, cout, xs, false, gs, true, &mut gw.data, 1.0, 1.0);
                }
                vec![gx, gw]
            }),
        )
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Var {
        let b = self.value(xs[0]).shape[0];
        let rest = self.value(xs[0]).shape[2..].to_vec();
        let inner: usize = rest.iter().product();
        let chans: Vec<usize> = xs
            .iter()
            .map(|&v| {
                let s = self.value(v);
                assert_eq!(s.shape[0], b, "concat batch mismatch");
                assert_eq!(&s.shape[2..], &rest[..], "concat spatial mismatch");
                s.shape[1]
            })
            .collect();
        let total: usize = chans.iter().sum();
        let mut data = Vec::with_capacity(b * total * inner);
        for bi in 0..b {
            for (&v, &c) in xs.iter().zip(&chans) {
                data.extend_from_slice(&self.value(v).data[bi * c * inner..(bi + 1) * c * inner]);
            }
        }
        let shape = [vec![b, total], rest].concat();
        let chans2 = chans.clone();
        let out = Tensor::new(shape, data);
        self.push(
            out,
            xs,
            Box::new(move |g, _, ins| {
                let mut outs: Vec<Tensor> = ins.iter().map(|t| Tensor::zeros(&t.shape)).collect();
                let mut off = 0;
                for bi in 0..b {
                    for (o, &c) in outs.iter_mut().zip(&chans2) {
                        o.data[bi * c * inner..(bi + 1) * c * inner].copy_from_slice(&g.data[off..off + c * inner]);
                        off += c * inner;
                    }
                }
                outs
            }),
        )
    }

    /// Matrix product of `x` (`[N, K]`) and `w` (`[K, M]`).
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let (xt, wt) = (self.value(x), self.value(w));
        let [n, k] = xt.shape[..] else { panic!("matmul lhs must be 2D") };
        let [wk, m] = wt.shape[..] else { panic!("matmul rhs must be 2D") };
        assert_eq!(k, wk, "matmul inner dimension mismatch");
        let mut out = Tensor::zeros(&[n, m]);
        gemm(n, k, m, &xt.data, false, &wt.data, false, &mut out.data, 1.0, 0.0);
        self.push(
            out,
            &[x, w],
            Box::new(move |g, _, ins| {
                let mut gx = Tensor::zeros(&[n, k]);
                let mut gw = Tensor::zeros(&[k, m]);
                gemm(n, m, k, &g.data, false, &ins[1].data, true, &mut gx.data, 1.0, 0.0);
                gemm(k, n, m, &ins[0].data, true, &g.data, false, &mut gw.data, 1.0, 0.0);
                vec![gx, gw]
            }),
        )
    }

    /// Swaps the last two axes of a `[B, P, Q]` tensor.
    pub fn transpose12(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let [b, p, q] = x.shape[..] else { panic!("transpose12 needs a 3D tensor") };
        let out = Tensor::new(vec![b, q, p], swap_last(&x.data, b, p, q));
        self.push(out, &[a], Box::new(move |g, _, _| vec![Tensor::new(vec![b, p, q], swap_last(&g.data, b, q, p))]))
    }

    // ---- reductions ----------------------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data.iter().sum();
        let shape = self.value(a).shape.clone();
        self.push(Tensor::scalar(s), &[a], Box::new(move |g, _, _| vec![Tensor::full(&shape, g.data[0])]))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Var {
        let x = self.value(a);
        let shape = x.shape.clone();
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &x.data[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s / n as f64;
                }
            }
        }
        let mut oshape = shape.clone();
        oshape.remove(axis);
        self.push(
            Tensor::new(oshape, out),
            &[a],
            Box::new(move |g, _, _| {
                let mut gx = Tensor::zeros(&shape);
                for o in 0..outer {
                    for k in 0..n {
                        let dst = &mut gx.data[(o * n + k) * inner..(o * n + k + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(&g.data[o * inner..(o + 1) * inner]) {
                            *d = s / n as f64;
                        }
                    }
                }
                vec![gx]
            }),
        )
    }

    /// Per-sample mean: `[B, ...] -> [B]`.
    pub fn mean_per_sample(&mut self, a: Var) -> Var {
        let b = self.value(a).shape[0];
        let n = self.value(a).len() / b.max(1);
        let r = self.reshape(a, &[b, n]);
        self.mean_axis(r, 1)
    }

    // ---- losses --------------------------------------------------------------

    /// Elementwise binary cross-entropy `-(t ln p + (1 - t) ln(1 - p))` with
    /// `p` clamped to `[PROB_EPS, 1 - PROB_EPS]` (clamped entries pass no
    /// gradient).
    pub fn bce(&mut self, p: Var, target: &Tensor) -> Var {
        let x = self.value(p);
        assert_eq!(x.shape, target.shape, "bce shape mismatch");
        let clamped = x.data.iter().filter(|&&v| !(PROB_EPS..=1.0 - PROB_EPS).contains(&v)).count();
        if clamped > 0 {
            log::warn!("{clamped} probabilities outside [{PROB_EPS}, 1 - {PROB_EPS}] clamped in cross-entropy");
        }
        let t = target.clone();
        let out = Tensor::new(
            x.shape.clone(),
            x.data
                .iter()
                .zip(&t.data)
                .map(|(&p, &t)| {
                    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                })
                .collect(),
        );
        self.push(
            out,
            &[p],
            Box::new(move |g, _, ins| {
                let d = g.data.iter().zip(&ins[0].data).zip(&t.data).map(|((g, &p), &t)| {
                    if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                        g * (-t / p + (1.0 - t) / (1.0 - p))
                    } else {
                        0.0
                    }
                });
                vec![Tensor::new(g.shape.clone(), d.collect())]
            }),
        )
    }

    /// Two-class softmax cross-entropy per pixel for logits `[B, 2, H, W]`
    /// and labels `[B, H, W]` in {0, 1}; returns `[B, H, W]`.
    pub fn softmax_ce2(&mut self, logits: Var, labels: &Tensor) -> Var {
        let x = self.value(logits);
        let (b, c) = (x.shape[0], x.shape[1]);
        assert_eq!(c, 2, "softmax_ce2 needs two channels");
        let hw = x.len() / (2 * b);
        assert_eq!(labels.len(), b * hw, "label count mismatch");
        let lab = labels.clone();
        let mut out = vec![0.0; b * hw];
        for bi in 0..b {
            for k in 0..hw {
                let (z0, z1) = (x.data[bi * 2 * hw + k], x.data[bi * 2 * hw + hw + k]);
                let m = z0.max(z1);
                let lse = m + ((z0 - m).exp() + (z1 - m).exp()).ln();
                let zc = if lab.data[bi * hw + k] > 0.5 { z1 } else { z0 };
                out[bi * hw + k] = lse - zc;
            }
        }
        let shape = [vec![b], x.shape[2..].to_vec()].concat();
        self.push(
            Tensor::new(shape, out),
            &[logits],
            Box::new(move |g, _, ins| {
                let x = ins[0];
                let mut gx = Tensor::zeros(&x.shape);
                for bi in 0..b {
                    for k in 0..hw {
                        let (i0, i1) = (bi * 2 * hw + k, bi * 2 * hw + hw + k);
                        let p1 = sigmoid(x.data[i1] - x.data[i0]);
                        let y1 = (lab.data[bi * hw + k] > 0.5) as u8 as f64;
                        let gg = g.data[bi * hw + k];
                        gx.data[i1] = gg * (p1 - y1);
                        gx.data[i0] = -gx.data[i1];
                    }
                }
                vec![gx]
            }),
        )
    }
}

fn swap_last(x: &[f64], b: usize, p: usize, q: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for i in 0..p {
            for j in 0..q {
                out[(bi * q + j) * p + i] = x[(bi * p + i) * q + j];
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}
