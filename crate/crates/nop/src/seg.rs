//! Chest-wall segmentation of B-mode images.
//!
//! Channel 0 of the two-class output is the chest wall, channel 1 everything
//! below it. The pleural line is the deepest chest-wall pixel of each column.

use pwt_core::Grid;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conv::resize_bilinear;
use crate::layers::UNet;
use crate::params::{Ctx, ParamStore};
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegConfig {
    /// Side of the square network input.
    pub size: usize,
    pub widths: Vec<usize>,
}

impl SegConfig {
    /// 400 x 400 input, four stride-2 levels down to 25 x 25.
    pub fn full() -> Self {
        Self { size: 400, widths: vec![32, 64, 128, 256, 512] }
    }

    pub fn desk() -> Self {
        Self { size: 96, widths: vec![4, 8, 16, 32] }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.widths.is_empty() {
            return Err("segmentation network needs at least one width".into());
        }
        let f = 1 << (self.widths.len() - 1);
        if self.size == 0 || self.size % f != 0 {
            return Err(format!("segmentation size {} not divisible by {f}", self.size));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SegNet {
    pub config: SegConfig,
    net: UNet,
}

impl SegNet {
    pub fn new(config: SegConfig, p: &mut ParamStore, rng: &mut impl Rng) -> Result<Self, String> {
        config.validate()?;
        let net = UNet::new(p, "seg", 1, 2, &config.widths, false, rng);
        Ok(Self { config, net })
    }

    /// Bottleneck side length for the configured input.
    pub fn bottleneck(&self) -> usize {
        self.config.size >> self.net.levels()
    }

    /// Logits `[B, 2, S, S]` for images `[B, 1, S, S]`.
    pub fn forward(&self, cx: &mut Ctx, images: Tensor) -> Var {
        let s = self.config.size;
        assert_eq!(&images.shape[1..], &[1, s, s], "segmentation input must be [B, 1, {s}, {s}]");
        let x = cx.tape.leaf(images);
        self.net.forward(cx, x)
    }

    /// Summed per-pixel cross-entropy against wall masks `[B, S, S]`
    /// (1 = chest wall), averaged over the batch.
    pub fn loss(&self, cx: &mut Ctx, logits: Var, wall: &Tensor) -> Var {
        let labels = wall.map(|v| if v > 0.5 { 0.0 } else { 1.0 });
        let ce = cx.tape.softmax_ce2(logits, &labels);
        let s = cx.tape.sum_all(ce);
        cx.tape.scale(s, 1.0 / wall.shape[0] as f64)
    }
}

/// Softmax over the two channels of `[B, 2, H, W]` logits.
pub fn softmax2(logits: &Tensor) -> Tensor {
    let b = logits.shape[0];
    let hw = logits.len() / (2 * b);
    let mut out = logits.clone();
    for bi in 0..b {
        for k in 0..hw {
            let (i0, i1) = (bi * 2 * hw + k, bi * 2 * hw + hw + k);
            let p1 = crate::tape::sigmoid(logits.data[i1] - logits.data[i0]);
            out.data[i0] = 1.0 - p1;
            out.data[i1] = p1;
        }
    }
    out
}

/// Wall-probability map of batch item `b` as a mask (p > 0.5).
pub fn wall_mask(probs: &Tensor, b: usize) -> Grid<bool> {
    let (h, w) = (probs.shape[2], probs.shape[3]);
    Grid::from_fn(h, w, |i, j| probs.data[((b * 2) * h + i) * w + j] > 0.5)
}

/// Deepest chest-wall row of every column, `None` for columns without wall.
pub fn pleural_line(mask: &Grid<bool>) -> Vec<Option<usize>> {
    (0..mask.cols()).map(|j| (0..mask.rows()).rev().find(|&i| mask[(i, j)])).collect()
}

/// Normalized network input from a dB image with dynamic range `dr`:
/// `[-dr, 0]` maps to `[0, 1]`, resized to `size x size`.
pub fn prepare_image(db: &Grid<f64>, dr: f64, size: usize) -> Tensor {
    let x = Tensor::new(vec![1, 1, db.rows(), db.cols()], db.data().iter().map(|v| ((v + dr) / dr).clamp(0.0, 1.0)).collect());
    resize_bilinear(&x, size, size)
}

/// Nearest-neighbour resize of a mask to `size x size`.
pub fn resize_mask(mask: &Grid<bool>, size: usize) -> Tensor {
    let (h, w) = (mask.rows(), mask.cols());
    let data = (0..size * size)
        .map(|k| {
            let (i, j) = (k / size, k % size);
            let (si, sj) = ((i * h + h / 2) / size, (j * w + w / 2) / size);
            mask[(si.min(h - 1), sj.min(w - 1))] as u8 as f64
        })
        .collect();
    Tensor::new(vec![1, size, size], data)
}
