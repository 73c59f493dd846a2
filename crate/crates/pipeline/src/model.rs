//! Both networks with their parameters, checkpoint I/O and inference.
//!
//! A checkpoint is one `PWT1` f64 tensor: every parameter and buffer of the
//! reconstruction network followed by the segmentation network, flattened
//! in registration order. The metadata carries both network configurations,
//! the parameter manifest (name and shape per entry) and an optional Platt
//! calibration.

use std::path::Path;

use pwt_core::beamform::sample_depth;
use pwt_core::io::{Tensor as FileTensor, TensorData};
use pwt_core::rng::{seeded, streams};
use pwt_core::sequence::RfTensor;
use pwt_core::{Error, Grid, Result};
use pwt_nop::calibrate::PlattFit;
use pwt_nop::seg::{pleural_line, softmax2, wall_mask};
use pwt_nop::{Ctx, Luna, LunaConfig, LunaInput, Mode, ParamStore, SegConfig, SegNet, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::PipelineConfig;

pub const CHECKPOINT_FORMAT: &str = "pwt-checkpoint-1";

#[derive(Clone, Debug)]
pub struct Model {
    pub luna: Luna,
    pub seg: SegNet,
    pub luna_params: ParamStore,
    pub seg_params: ParamStore,
    pub platt: Option<PlattFit>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    network: LunaConfig,
    seg: SegConfig,
    params: Vec<(String, Vec<usize>)>,
    platt: Option<PlattFit>,
}

impl Model {
    pub fn init(cfg: &PipelineConfig, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed, streams::INIT);
        let mut luna_params = ParamStore::new();
        let luna = Luna::new(cfg.network.clone(), &mut luna_params, &mut rng).map_err(Error::InvalidConfig)?;
        luna.output_shape().map_err(Error::InvalidConfig)?;
        let mut seg_params = ParamStore::new();
        let seg = SegNet::new(cfg.seg.clone(), &mut seg_params, &mut rng).map_err(Error::InvalidConfig)?;
        Ok(Self { luna, seg, luna_params, seg_params, platt: None })
    }

    fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let mut m = self.luna_params.manifest();
        m.extend(self.seg_params.manifest());
        m
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let data: Vec<f64> = self
            .luna_params
            .entries()
            .iter()
            .chain(self.seg_params.entries())
            .flat_map(|e| e.value.data.iter().copied())
            .collect();
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            network: self.luna.config.clone(),
            seg: self.seg.config.clone(),
            params: self.manifest(),
            platt: self.platt,
        };
        let t = FileTensor::new(vec![data.len()], TensorData::F64(data), serde_json::to_value(meta).expect("meta serializes"))?;
        t.write(path)
    }

    /// Loads a checkpoint into the networks described by `cfg`; any
    /// difference in configuration or parameter layout is
    /// `checkpoint-incompatible`.
    pub fn load(cfg: &PipelineConfig, path: &Path) -> Result<Self> {
        let t = FileTensor::read(path)?;
        let incompatible = |m: String| Error::CheckpointIncompatible(format!("{}: {m}", path.display()));
        let meta: CheckpointMeta = serde_json::from_value(t.meta.clone()).map_err(|e| incompatible(format!("metadata: {e}")))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(incompatible(format!("format {:?}", meta.format)));
        }
        if meta.network != cfg.network {
            return Err(incompatible("reconstruction network configuration differs".into()));
        }
        if meta.seg != cfg.seg {
            return Err(incompatible("segmentation network configuration differs".into()));
        }
        let mut model = Self::init(cfg, 0)?;
        if meta.params != model.manifest() {
            return Err(incompatible("parameter manifest differs".into()));
        }
        let TensorData::F64(data) = &t.data else { return Err(incompatible("payload is not f64".into())) };
        let total: usize = meta.params.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if data.len() != total || t.dims != [total] {
            return Err(incompatible(format!("payload holds {} values, manifest {total}", data.len())));
        }
        let mut at = 0;
        for e in model.luna_params.entries_mut().iter_mut().chain(model.seg_params.entries_mut()) {
            let n = e.value.len();
            e.value.data.copy_from_slice(&data[at..at + n]);
            at += n;
        }
        model.platt = meta.platt;
        Ok(model)
    }

    /// Wall masks at the segmentation size for images `[1, 1, S, S]`.
    pub fn segment(&self, images: &[&Tensor]) -> Vec<Grid<bool>> {
        if images.is_empty() {
            return Vec::new();
        }
        let batch = Tensor::stack_batch(&images.iter().map(|t| (*t).clone()).collect::<Vec<_>>());
        let mut cx = Ctx::new(&self.seg_params, Mode::Eval);
        let z = self.seg.forward(&mut cx, batch);
        let probs = softmax2(cx.tape.value(z));
        (0..images.len()).map(|b| wall_mask(&probs, b)).collect()
    }

    /// Aeration probability maps (`out_rows x n_events`), calibrated when a
    /// Platt fit is attached and `calibrated` is set.
    pub fn reconstruct(&self, inputs: &[LunaInput], calibrated: bool) -> Vec<Grid<f64>> {
        if inputs.is_empty() {
            return Vec::new();
        }
        let mut cx = Ctx::new(&self.luna_params, Mode::Eval);
        let y = self.luna.forward(&mut cx, inputs);
        let out = cx.tape.value(y);
        let (h, w) = (out.shape[1], out.shape[2]);
        let platt = if calibrated { self.platt } else { None };
        (0..inputs.len())
            .map(|b| {
                let v = &out.data[b * h * w..(b + 1) * h * w];
                let data = v.iter().map(|&p| platt.map_or(p, |f| f.apply(p))).collect();
                Grid::from_vec(h, w, data).expect("output shape")
            })
            .collect()
    }
}

/// Pleural depth under each event from a predicted wall mask at the
/// segmentation size. Mask columns are pooled per event; events without any
/// wall pixel take the median of the others, or `fallback_m` if the mask is
/// empty.
pub fn pleura_from_mask(mask: &Grid<bool>, rf: &RfTensor, fallback_m: f64) -> Vec<f64> {
    let (s_rows, s_cols) = (mask.rows(), mask.cols());
    let (t, n_e) = (rf.n_samples as f64, rf.n_events);
    let line = pleural_line(mask);
    let depth_of = |r: usize| {
        // Bottom edge of mask row r in (fractional) sample units.
        let edge = (r + 1) as f64 * t / s_rows as f64 - 0.5;
        let k = edge.floor().clamp(0.0, t - 1.0) as usize;
        let k1 = (k + 1).min(rf.n_samples - 1);
        let f = (edge - k as f64).clamp(0.0, 1.0);
        (1.0 - f) * sample_depth(rf, k) + f * sample_depth(rf, k1)
    };
    let mut per_event: Vec<Option<f64>> = (0..n_e)
        .map(|e| {
            let d: Vec<f64> = (0..s_cols)
                .filter(|&s| ((s as f64 + 0.5) * n_e as f64 / s_cols as f64).floor() as usize == e)
                .filter_map(|s| line[s].map(depth_of))
                .collect();
            (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
        })
        .collect();
    let mut known: Vec<f64> = per_event.iter().flatten().copied().collect();
    known.sort_by(f64::total_cmp);
    let fill = if known.is_empty() { fallback_m } else { known[known.len() / 2] };
    per_event.iter_mut().map(|d| d.unwrap_or(fill)).collect()
}

/// Checkpoint summary for logs.
pub fn describe(model: &Model) -> serde_json::Value {
    json!({
        "reconstruction_parameters": model.luna_params.count(),
        "segmentation_parameters": model.seg_params.count(),
        "calibrated": model.platt.is_some(),
    })
}
