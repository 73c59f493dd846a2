//! The work behind each CLI verb.

use std::fs;
use std::path::{Path, PathBuf};

use pwt_core::beamform::{bmode, upsample_display};
use pwt_core::io::{db_to_gray, write_atomic, write_pgm, Tensor as FileTensor, TensorData};
use pwt_core::metrics::{calibration_curve, CalibrationCurve, EvalReport, SampleRow};
use pwt_core::{Error, Grid, Result};
use pwt_nop::calibrate::{platt_calibrate, PlattFit, ECE_BINS};
use pwt_nop::loss::LossMode;
use serde::Serialize;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::data::{load_manifest, Sample};
use crate::dataset::{generate, DatasetManifest, GenerateOptions, GenerateReport};
use crate::model::Model;
use crate::records::{rf_from_tensor, Split};
use crate::train::{predict, predicted_pleura, train_reconstruction, train_segmentation, EpochRecord};

pub const CHECKPOINT: &str = "model.pwt";
pub const LOSS_LOG: &str = "loss.csv";
pub const FINETUNE_LOG: &str = "finetune_loss.csv";
pub const SEG_LOG: &str = "seg_loss.csv";

fn write_config(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    write_atomic(&out.join("config.json"), cfg.to_json().as_bytes())
}

pub fn cmd_generate(cfg: &PipelineConfig, split: Split, out: &Path, opts: &GenerateOptions) -> Result<GenerateReport> {
    let report = generate(cfg, split, out, opts)?;
    write_config(cfg, out)?;
    Ok(report)
}

/// B-mode image of one RF file, display-interpolated by `upsample`:
/// `bmode.pwt` (dB values) and `bmode.pgm`.
pub fn cmd_beamform(rf_path: &Path, out: &Path, upsample: usize, dynamic_range_db: f64) -> Result<Grid<f64>> {
    if upsample == 0 {
        return Err(Error::InvalidInput("upsampling factor must be at least 1".into()));
    }
    let rf = rf_from_tensor(&FileTensor::read(rf_path)?)?;
    let mut img = bmode(&rf);
    img.img = img.img.map(|v| v.max(-dynamic_range_db));
    img.dynamic_range_db = dynamic_range_db;
    let up = upsample_display(&img, upsample);
    fs::create_dir_all(out)?;
    let meta = json!({
        "kind": "bmode",
        "axial_pitch_m": up.axial_pitch_m,
        "lateral_pitch_m": up.lateral_pitch_m,
        "dynamic_range_db": up.dynamic_range_db,
        "upsample": upsample,
    });
    FileTensor::from_grid(&up.img, meta).write(out.join("bmode.pwt"))?;
    write_pgm(out.join("bmode.pgm"), &db_to_gray(&up.img, up.dynamic_range_db))?;
    Ok(up.img)
}

fn load(cfg: &PipelineConfig, manifest: &Path) -> Result<Vec<Sample>> {
    let samples = load_manifest(cfg, manifest)?;
    log::info!("{}: {} samples", manifest.display(), samples.len());
    Ok(samples)
}

/// Segmentation then reconstruction training from scratch.
pub fn cmd_train(cfg: &PipelineConfig, train: &Path, val: Option<&Path>, out: &Path) -> Result<Vec<EpochRecord>> {
    let train = load(cfg, train)?;
    if train.is_empty() {
        return Err(Error::InvalidInput("training manifest has no records".into()));
    }
    let val = match val {
        Some(p) => load(cfg, p)?,
        None => Vec::new(),
    };
    fs::create_dir_all(out)?;
    write_config(cfg, out)?;
    let mut model = Model::init(cfg, cfg.seed)?;
    log::info!("model: {}", crate::model::describe(&model));
    train_segmentation(&mut model, &train, cfg, cfg.seed, Some(&out.join(SEG_LOG)))?;
    let val_pleura = predicted_pleura(&model, &val, cfg);
    let history = train_reconstruction(
        &mut model,
        &train,
        &val,
        &val_pleura,
        cfg,
        LossMode::Pretrain,
        cfg.train.epochs_pretrain,
        cfg.seed,
        Some(&out.join(LOSS_LOG)),
    )?;
    model.save(&out.join(CHECKPOINT))?;
    Ok(history)
}

/// Aeration-loss-only training of a pretrained checkpoint.
pub fn cmd_finetune(cfg: &PipelineConfig, checkpoint: &Path, train: &Path, val: Option<&Path>, out: &Path) -> Result<Vec<EpochRecord>> {
    let mut model = Model::load(cfg, checkpoint)?;
    let train = load(cfg, train)?;
    if train.is_empty() {
        return Err(Error::InvalidInput("fine-tuning manifest has no records".into()));
    }
    let val = match val {
        Some(p) => load(cfg, p)?,
        None => Vec::new(),
    };
    fs::create_dir_all(out)?;
    let val_pleura = predicted_pleura(&model, &val, cfg);
    let history = train_reconstruction(
        &mut model,
        &train,
        &val,
        &val_pleura,
        cfg,
        LossMode::Finetune,
        cfg.train.epochs_finetune,
        cfg.seed ^ 0xF1AE,
        Some(&out.join(FINETUNE_LOG)),
    )?;
    model.save(&out.join(CHECKPOINT))?;
    Ok(history)
}

fn pred_name(index: usize) -> String {
    format!("rec_{index:05}.pred.pwt")
}

fn wall_pred_name(index: usize) -> String {
    format!("rec_{index:05}.wallpred.pwt")
}

/// Writes one prediction: the map (`out_rows x n_events`) and, when given,
/// the predicted wall mask at the segmentation size.
pub fn write_prediction(out: &Path, index: usize, map: &Grid<f64>, wall: Option<&Grid<bool>>, pleura_m: &[f64]) -> Result<()> {
    let gamma = map.data().iter().sum::<f64>() / map.len() as f64;
    FileTensor::from_grid(map, json!({ "kind": "prediction", "gamma_pred": gamma, "pleura_depth_m": pleura_m }))
        .write(out.join(pred_name(index)))?;
    if let Some(w) = wall {
        FileTensor::from_mask(w, json!({ "kind": "wall-prediction" })).write(out.join(wall_pred_name(index)))?;
    }
    Ok(())
}

/// Per-sample maps and wall masks plus `gammas.csv`.
pub fn cmd_infer(cfg: &PipelineConfig, checkpoint: &Path, manifest: &Path, out: &Path) -> Result<Vec<f64>> {
    let model = Model::load(cfg, checkpoint)?;
    let samples = load(cfg, manifest)?;
    fs::create_dir_all(out)?;
    let fallback = 0.5 * (cfg.phantom.pleura_depth_m[0] + cfg.phantom.pleura_depth_m[1]);
    let mut csv = String::from("id,gamma_pred\n");
    let mut gammas = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(cfg.train.batch) {
        let masks = model.segment(&chunk.iter().map(|s| &s.image).collect::<Vec<_>>());
        let pleura: Vec<Vec<f64>> =
            chunk.iter().zip(&masks).map(|(s, m)| crate::model::pleura_from_mask(m, &s.delayed, fallback)).collect();
        let maps = predict(&model, chunk, &pleura, chunk.len(), true);
        for ((s, map), (mask, pl)) in chunk.iter().zip(&maps).zip(masks.iter().zip(&pleura)) {
            write_prediction(out, s.entry.index, map, Some(mask), pl)?;
            let g = map.data().iter().sum::<f64>() / map.len() as f64;
            csv.push_str(&format!("{},{g}\n", s.id()));
            gammas.push(g);
        }
    }
    write_atomic(&out.join("gammas.csv"), csv.as_bytes())?;
    Ok(gammas)
}

/// Metrics of the predictions in `predictions` against a manifest's truth:
/// `report.json`, `rows.csv` and `groups.csv`.
pub fn cmd_evaluate(cfg: &PipelineConfig, manifest: &Path, predictions: &Path, out: &Path) -> Result<EvalReport> {
    let samples = load(cfg, manifest)?;
    let s = cfg.seg.size;
    let mut rows = Vec::with_capacity(samples.len());
    for sample in &samples {
        let pred = FileTensor::read(predictions.join(pred_name(sample.entry.index)))?.to_grid()?;
        let wall_path = predictions.join(wall_pred_name(sample.entry.index));
        let truth_wall = Grid::from_vec(s, s, sample.wall.data.iter().map(|&v| v > 0.5).collect()).expect("mask size");
        let pred_wall = if wall_path.exists() { Some(FileTensor::read(&wall_path)?.to_grid()?.map(|&v| v > 0.5)) } else { None };
        let masks = pred_wall.as_ref().map(|p| (p, &truth_wall));
        rows.push(SampleRow::evaluate(sample.id(), &pred, &sample.target, sample.entry.pleura_depth, masks)?);
    }
    let d = cfg.phantom.pleura_depth_m;
    let report = EvalReport::new(rows, (d[0], d[1]));
    fs::create_dir_all(out)?;
    write_atomic(&out.join("report.json"), report.to_json().as_bytes())?;
    write_atomic(&out.join("rows.csv"), report.rows_csv().as_bytes())?;
    write_atomic(&out.join("groups.csv"), report.groups_csv().as_bytes())?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct CalibrationReport {
    pub fit: PlattFit,
    pub before: CalibrationCurve,
    pub after: CalibrationCurve,
}

/// Fits Platt scaling on a (validation) manifest and writes the calibrated
/// checkpoint and `calibration.json`.
pub fn cmd_calibrate(cfg: &PipelineConfig, checkpoint: &Path, manifest: &Path, out: &Path) -> Result<CalibrationReport> {
    let mut model = Model::load(cfg, checkpoint)?;
    let samples = load(cfg, manifest)?;
    let pleura = predicted_pleura(&model, &samples, cfg);
    let maps = predict(&model, &samples, &pleura, cfg.train.batch, false);
    let preds: Vec<f64> = maps.iter().flat_map(|m| m.data().iter().copied()).collect();
    let truths: Vec<f64> = samples.iter().flat_map(|s| s.target.data().iter().map(|&v| (v > 0.5) as u8 as f64)).collect();
    let fit = platt_calibrate(&preds, &truths)?;
    let calibrated: Vec<f64> = preds.iter().map(|&p| fit.apply(p)).collect();
    let report = CalibrationReport {
        fit,
        before: calibration_curve(&preds, &truths, ECE_BINS)?,
        after: calibration_curve(&calibrated, &truths, ECE_BINS)?,
    };
    model.platt = Some(fit);
    fs::create_dir_all(out)?;
    model.save(&out.join(CHECKPOINT))?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&out.join("calibration.json"), text.as_bytes())?;
    Ok(report)
}

/// Fast internal consistency checks; one `(name, passed, detail)` per check.
pub fn cmd_selftest() -> Vec<(String, bool, String)> {
    let mut out = Vec::new();
    let mut check = |name: &str, r: std::result::Result<String, String>| match r {
        Ok(d) => out.push((name.to_string(), true, d)),
        Err(d) => out.push((name.to_string(), false, d)),
    };

    check("config-presets", {
        [PipelineConfig::full_scale(), PipelineConfig::desk(8.0), PipelineConfig::tiny()]
            .iter()
            .try_for_each(|c| c.validate())
            .map(|_| "full, desk and tiny presets validate".to_string())
            .map_err(|e| e.to_string())
    });

    check("tensor-round-trip", {
        let t = FileTensor::new(vec![2, 3], TensorData::F64(vec![0.0, -1.5, f64::NAN, 1e-300, f64::INFINITY, 7.0]), json!({"k": 1}))
            .expect("dims match");
        let back = FileTensor::from_bytes(&t.to_bytes()).map_err(|e| e.to_string());
        back.and_then(|b| {
            let same = match (&b.data, &t.data) {
                (TensorData::F64(a), TensorData::F64(c)) => a.iter().zip(c).all(|(x, y)| x.to_bits() == y.to_bits()),
                _ => false,
            };
            if same && b.dims == t.dims && b.meta == t.meta { Ok("bit-exact".into()) } else { Err("payload changed".into()) }
        })
    });

    check("gradients", {
        let cfg = PipelineConfig::tiny();
        let mut net = cfg.network.clone();
        (net.n_samples, net.n_receivers, net.n_events, net.width, net.modes, net.out_rows) = (16, 4, 4, 3, 3, 4);
        net.spatial_widths = vec![3, 4];
        let mut p = pwt_nop::ParamStore::new();
        let luna = pwt_nop::Luna::new(net.clone(), &mut p, &mut pwt_core::rng::seeded(1, 0));
        luna.map_err(|e| e.to_string()).and_then(|luna| {
            let features = pwt_nop::Tensor::new(
                vec![2 * 16, 4, pwt_nop::features::n_freq(16)],
                (0..2 * 16 * 4 * 9).map(|k| ((k * 37 % 101) as f64 / 50.0 - 1.0) * 0.7).collect(),
            );
            let checks = pwt_nop::gradcheck::gradcheck(&p, pwt_nop::Mode::Train, 1e-5, |cx| {
                let y = luna.forward_features(cx, features.clone());
                cx.tape.sum_all(y)
            });
            let worst = checks.iter().map(|c| c.rel_err).fold(0.0, f64::max);
            if worst < 1e-4 { Ok(format!("{} groups, worst rel err {worst:.2e}", checks.len())) } else { Err(format!("rel err {worst:.2e}")) }
        })
    });
    out
}

/// Manifest path for a split written by `generate` into `root/<split>`.
pub fn split_dir(root: &Path, split: Split) -> PathBuf {
    root.join(split.name())
}

/// Loads and validates a manifest against the configuration.
pub fn check_manifest(cfg: &PipelineConfig, path: &Path) -> Result<DatasetManifest> {
    let (m, dir) = DatasetManifest::load(path)?;
    m.validate(&dir, cfg)?;
    Ok(m)
}
