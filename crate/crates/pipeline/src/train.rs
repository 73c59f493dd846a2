//! Training loops for the segmentation and reconstruction networks.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use pwt_core::rng::{mix_seed, seeded, streams};
use pwt_core::{Grid, Result};
use pwt_nop::augment::augment;
use pwt_nop::loss::{loss_total, LossMode};
use pwt_nop::optim::Adam;
use pwt_nop::{Ctx, LunaInput, Mode, Tensor};
use rand::seq::SliceRandom;

use crate::config::PipelineConfig;
use crate::data::Sample;
use crate::model::{pleura_from_mask, Model};

/// One row of the reconstruction loss log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-sample mean of the summed cross-entropy.
    pub ce: f64,
    /// Per-sample mean of the aeration error term (unweighted).
    pub l_gamma: f64,
    /// Total objective as optimized.
    pub loss: f64,
    pub val_mae: Option<f64>,
}

pub const LOSS_HEADER: &str = "epoch,ce,l_gamma,val_mae";

/// CSV log, truncated when opened and appended to once per epoch.
struct CsvLog(Option<File>);

impl CsvLog {
    fn open(path: Option<&Path>, header: &str) -> Result<Self> {
        let Some(path) = path else { return Ok(Self(None)) };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut f = File::create(path)?;
        writeln!(f, "{header}")?;
        Ok(Self(Some(f)))
    }

    fn row(&mut self, line: &str) -> Result<()> {
        if let Some(f) = &mut self.0 {
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        Ok(())
    }
}

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(mix_seed(seed, epoch as u64), streams::SHUFFLE));
    order
}

/// Trains the segmentation network on the samples' B-mode images and wall
/// masks. Returns the mean per-sample loss of each epoch.
pub fn train_segmentation(model: &mut Model, samples: &[Sample], cfg: &PipelineConfig, seed: u64, log: Option<&Path>) -> Result<Vec<f64>> {
    let mut csv = CsvLog::open(log, "epoch,seg_ce")?;
    let mut opt = Adam::new(cfg.train.seg_adam, &model.seg_params);
    let mut history = Vec::new();
    if samples.is_empty() {
        return Ok(history);
    }
    for epoch in 1..=cfg.train.seg_epochs {
        let order = shuffled(samples.len(), mix_seed(seed, 1), epoch);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.train.seg_batch) {
            let images = Tensor::stack_batch(&chunk.iter().map(|&i| samples[i].image.clone()).collect::<Vec<_>>());
            let walls = Tensor::stack_batch(&chunk.iter().map(|&i| samples[i].wall.clone()).collect::<Vec<_>>());
            let mut cx = Ctx::new(&model.seg_params, Mode::Train);
            let z = model.seg.forward(&mut cx, images);
            let l = model.seg.loss(&mut cx, z, &walls);
            total += cx.tape.value(l).item() * chunk.len() as f64;
            cx.tape.backward(l);
            let grads = cx.grads();
            let stats = std::mem::take(&mut cx.stats);
            drop(cx);
            opt.step(&mut model.seg_params, &grads);
            model.seg_params.apply_stats(&stats);
        }
        let mean = total / samples.len() as f64;
        log::info!("segmentation epoch {epoch}: loss {mean:.4}");
        csv.row(&format!("{epoch},{mean}"))?;
        history.push(mean);
    }
    Ok(history)
}

/// Pleural profiles of the samples as the segmentation network sees them.
pub fn predicted_pleura(model: &Model, samples: &[Sample], cfg: &PipelineConfig) -> Vec<Vec<f64>> {
    let fallback = 0.5 * (cfg.phantom.pleura_depth_m[0] + cfg.phantom.pleura_depth_m[1]);
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(cfg.train.seg_batch) {
        let masks = model.segment(&chunk.iter().map(|s| &s.image).collect::<Vec<_>>());
        out.extend(chunk.iter().zip(&masks).map(|(s, m)| pleura_from_mask(m, &s.delayed, fallback)));
    }
    out
}

/// Predicted maps for `samples` with the given pleural profiles.
pub fn predict(model: &Model, samples: &[Sample], pleura: &[Vec<f64>], batch: usize, calibrated: bool) -> Vec<Grid<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for (chunk, pl) in samples.chunks(batch).zip(pleura.chunks(batch)) {
        let inputs: Vec<LunaInput> = chunk.iter().zip(pl).map(|(s, p)| LunaInput { rf: &s.delayed, pleura_depth_m: p }).collect();
        out.extend(model.reconstruct(&inputs, calibrated));
    }
    out
}

fn mean(g: &Grid<f64>) -> f64 {
    g.data().iter().sum::<f64>() / g.len() as f64
}

/// Mean absolute aeration error of the model on `samples`.
pub fn aeration_mae(model: &Model, samples: &[Sample], pleura: &[Vec<f64>], batch: usize) -> f64 {
    let preds = predict(model, samples, pleura, batch, false);
    preds.iter().zip(samples).map(|(p, s)| (mean(p) - s.gamma).abs()).sum::<f64>() / samples.len() as f64
}

/// Mean absolute error of predicting the training-set mean aeration for
/// every sample.
pub fn constant_mae(train: &[Sample], eval: &[Sample]) -> f64 {
    let m = train.iter().map(|s| s.gamma).sum::<f64>() / train.len() as f64;
    eval.iter().map(|s| (s.gamma - m).abs()).sum::<f64>() / eval.len() as f64
}

/// Trains the reconstruction network for `epochs` epochs with the true
/// pleural profiles as the wall channel, logging one CSV row per epoch.
/// `val_pleura` are the (predicted) profiles used for the validation MAE.
#[allow(clippy::too_many_arguments)]
pub fn train_reconstruction(
    model: &mut Model,
    train: &[Sample],
    val: &[Sample],
    val_pleura: &[Vec<f64>],
    cfg: &PipelineConfig,
    mode: LossMode,
    epochs: usize,
    seed: u64,
    log: Option<&Path>,
) -> Result<Vec<EpochRecord>> {
    let mut csv = CsvLog::open(log, LOSS_HEADER)?;
    let mut opt = Adam::new(cfg.train.adam, &model.luna_params);
    let (h, w) = (cfg.network.out_rows, cfg.network.n_events);
    let mut history = Vec::new();
    if train.is_empty() {
        return Ok(history);
    }
    for epoch in 1..=epochs {
        let order = shuffled(train.len(), mix_seed(seed, 2), epoch);
        let (mut ce, mut lg, mut total) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.train.batch) {
            let rfs: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let key = mix_seed(mix_seed(seed, epoch as u64), train[i].entry.index as u64);
                    augment(&train[i].delayed, &cfg.train.augment, &mut seeded(key, streams::AUGMENT))
                })
                .collect();
            let inputs: Vec<LunaInput> =
                chunk.iter().zip(&rfs).map(|(&i, rf)| LunaInput { rf, pleura_depth_m: &train[i].pleura_m }).collect();
            let truth = Tensor::new(
                vec![chunk.len(), h, w],
                chunk.iter().flat_map(|&i| train[i].target.data().iter().copied()).collect(),
            );
            let gammas: Vec<f64> = chunk.iter().map(|&i| train[i].gamma).collect();
            let mut cx = Ctx::new(&model.luna_params, Mode::Train);
            let pred = model.luna.forward(&mut cx, &inputs);
            let parts = loss_total(&mut cx.tape, pred, &truth, &gammas, cfg.train.eta, mode);
            let n = chunk.len() as f64;
            ce += parts.ce * n;
            lg += parts.l_gamma * n;
            total += cx.tape.value(parts.total).item() * n;
            cx.tape.backward(parts.total);
            let grads = cx.grads();
            let stats = std::mem::take(&mut cx.stats);
            drop(cx);
            opt.step(&mut model.luna_params, &grads);
            model.luna_params.apply_stats(&stats);
        }
        let n = train.len() as f64;
        let val_mae = (!val.is_empty()).then(|| aeration_mae(model, val, val_pleura, cfg.train.batch));
        let rec = EpochRecord { epoch, ce: ce / n, l_gamma: lg / n, loss: total / n, val_mae };
        log::info!("epoch {epoch}: ce {:.4} l_gamma {:.4} val_mae {:?}", rec.ce, rec.l_gamma, rec.val_mae);
        csv.row(&format!("{},{},{},{}", rec.epoch, rec.ce, rec.l_gamma, rec.val_mae.map(|v| v.to_string()).unwrap_or_default()))?;
        history.push(rec);
    }
    Ok(history)
}

/// Means of consecutive non-overlapping windows of `k` values (a trailing
/// partial window is dropped).
pub fn window_means(values: &[f64], k: usize) -> Vec<f64> {
    values.chunks_exact(k).map(|c| c.iter().sum::<f64>() / k as f64).collect()
}
