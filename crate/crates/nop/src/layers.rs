//! Parameterized building blocks: convolutions, batch norm, FNO layers and a
//! U-shaped encoder-decoder.

use rand::Rng;

use crate::params::{kaiming_uniform, spectral_init, Ctx, Mode, ParamId, ParamStore};
use crate::spectral::max_modes;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Conv {
    w: ParamId,
    b: Option<ParamId>,
    stride: usize,
    pad: usize,
}

impl Conv {
    pub fn new(p: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let w = p.add(format!("{name}.w"), kaiming_uniform(&[cout, cin, k, k], cin * k * k, rng));
        let b = Some(p.add(format!("{name}.b"), Tensor::zeros(&[cout])));
        Self { w, b, stride, pad: k / 2 }
    }

    /// Without bias, for a convolution followed by batch norm (which would
    /// cancel it).
    pub fn unbiased(p: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let w = p.add(format!("{name}.w"), kaiming_uniform(&[cout, cin, k, k], cin * k * k, rng));
        Self { w, b: None, stride, pad: k / 2 }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let w = cx.var(self.w);
        let y = cx.tape.conv2d(x, w, self.stride, self.pad);
        match self.b {
            Some(b) => {
                let b = cx.var(b);
                cx.tape.add_channel_bias(y, b)
            }
            None => y,
        }
    }
}

/// 2x2 stride-2 transposed convolution with bias.
#[derive(Clone, Debug)]
pub struct Up {
    w: ParamId,
    b: ParamId,
}

impl Up {
    pub fn new(p: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let w = p.add(format!("{name}.w"), kaiming_uniform(&[cin, cout, 2, 2], cin, rng));
        let b = p.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self { w, b }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let (w, b) = (cx.var(self.w), cx.var(self.b));
        let y = cx.tape.conv_transpose2x2(x, w);
        cx.tape.add_channel_bias(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

impl BatchNorm {
    pub fn new(p: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            gamma: p.add(format!("{name}.gamma"), Tensor::full(&[c], 1.0)),
            beta: p.add(format!("{name}.beta"), Tensor::zeros(&[c])),
            mean: p.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[c])),
            var: p.add_buffer(format!("{name}.running_var"), Tensor::full(&[c], 1.0)),
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let (g, b) = (cx.var(self.gamma), cx.var(self.beta));
        match cx.mode {
            Mode::Train => {
                let (y, stats) = cx.tape.batch_norm_train(x, g, b);
                cx.stats.push((self.mean, self.var, stats));
                y
            }
            Mode::Eval => {
                let (m, v) = (cx.params.get(self.mean).clone(), cx.params.get(self.var).clone());
                cx.tape.batch_norm_eval(x, g, b, &m, &v)
            }
        }
    }
}

/// `gelu(spectral(x) + W x + b)` on `[N, C, L]`.
#[derive(Clone, Debug)]
pub struct FnoLayer {
    wr: ParamId,
    wi: ParamId,
    pointwise: ParamId,
    bias: ParamId,
    pub modes: usize,
    pub channels: usize,
}

impl FnoLayer {
    pub fn new(p: &mut ParamStore, name: &str, cin: usize, cout: usize, modes: usize, rng: &mut impl Rng) -> Self {
        let (wr, wi) = spectral_init(modes, cin, cout, rng);
        Self {
            wr: p.add(format!("{name}.spectral_re"), wr),
            wi: p.add(format!("{name}.spectral_im"), wi),
            pointwise: p.add(format!("{name}.pointwise"), kaiming_uniform(&[cin, cout], cin, rng)),
            bias: p.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
            modes,
            channels: cout,
        }
    }

    /// Checks the layer against an input axis of length `l`.
    pub fn check_len(&self, l: usize) -> Result<(), String> {
        if self.modes > max_modes(l) {
            return Err(format!("{} modes exceed the {} available on an axis of {l}", self.modes, max_modes(l)));
        }
        Ok(())
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let (wr, wi, wp, b) = (cx.var(self.wr), cx.var(self.wi), cx.var(self.pointwise), cx.var(self.bias));
        let s = cx.tape.spectral_conv(x, wr, wi);
        let q = cx.tape.channel_mix(x, wp);
        let sum = cx.tape.add(s, q);
        let z = cx.tape.add_channel_bias(sum, b);
        cx.tape.gelu(z)
    }
}

/// Encoder-decoder with stride-2 downsampling, transposed-convolution
/// upsampling and skip connections. `widths[0]` is the stem width, each
/// further entry one downsampling level.
#[derive(Clone, Debug)]
pub struct UNet {
    stem: Conv,
    down: Vec<(Conv, Conv)>,
    up: Vec<(Up, Conv)>,
    head: Conv,
    norm: Option<BatchNorm>,
    pub widths: Vec<usize>,
}

impl UNet {
    pub fn new(p: &mut ParamStore, name: &str, cin: usize, cout: usize, widths: &[usize], out_norm: bool, rng: &mut impl Rng) -> Self {
        assert!(!widths.is_empty(), "UNet needs at least a stem width");
        let stem = Conv::new(p, &format!("{name}.stem"), cin, widths[0], 3, 1, rng);
        let down = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                (
                    Conv::new(p, &format!("{name}.down{l}.a"), w[0], w[1], 3, 2, rng),
                    Conv::new(p, &format!("{name}.down{l}.b"), w[1], w[1], 3, 1, rng),
                )
            })
            .collect();
        let up = widths
            .windows(2)
            .enumerate()
            .rev()
            .map(|(l, w)| {
                (Up::new(p, &format!("{name}.up{l}.t"), w[1], w[0], rng), Conv::new(p, &format!("{name}.up{l}.c"), 2 * w[0], w[0], 3, 1, rng))
            })
            .collect();
        let head = if out_norm {
            Conv::unbiased(p, &format!("{name}.head"), widths[0], cout, 1, 1, rng)
        } else {
            Conv::new(p, &format!("{name}.head"), widths[0], cout, 1, 1, rng)
        };
        let norm = out_norm.then(|| BatchNorm::new(p, &format!("{name}.norm"), cout));
        Self { stem, down, up, head, norm, widths: widths.to_vec() }
    }

    pub fn levels(&self) -> usize {
        self.down.len()
    }

    /// Spatial dimensions must be divisible by `2^levels`.
    pub fn check_dims(&self, h: usize, w: usize) -> Result<(), String> {
        let f = 1 << self.levels();
        if h % f != 0 || w % f != 0 || h == 0 || w == 0 {
            return Err(format!("{h}x{w} input is not divisible by {f} for {} levels", self.levels()));
        }
        Ok(())
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let s = self.stem.forward(cx, x);
        let mut h = cx.tape.gelu(s);
        let mut skips = Vec::with_capacity(self.down.len());
        for (a, b) in &self.down {
            skips.push(h);
            let y = a.forward(cx, h);
            let y = cx.tape.gelu(y);
            let y = b.forward(cx, y);
            h = cx.tape.gelu(y);
        }
        for (t, c) in &self.up {
            let skip = skips.pop().expect("one skip per level");
            let y = t.forward(cx, h);
            let y = cx.tape.concat_channels(&[y, skip]);
            let y = c.forward(cx, y);
            h = cx.tape.gelu(y);
        }
        let out = self.head.forward(cx, h);
        match &self.norm {
            Some(n) => n.forward(cx, out),
            None => out,
        }
    }
}
