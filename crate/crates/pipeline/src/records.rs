//! One dataset record: parameter draws, phantom, simulation and the targets
//! derived from them.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use pwt_core::beamform::sample_depth;
use pwt_core::io::{Tensor, TensorData};
use pwt_core::phantom::{assemble_medium, derecruit_to_target, generate_alveolar_texture, AerationMap, AssembledMedium, PhantomSpec};
use pwt_core::rng::{mix_seed, seeded, streams};
use pwt_core::sequence::{acquire_range, RfMeta, RfTensor};
use pwt_core::{Error, Grid, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::PipelineConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Eval,
    Finetune,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Eval, Split::Finetune];

    fn code(self) -> u64 {
        self as u64 + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Eval => "eval",
            Split::Finetune => "finetune",
        }
    }

    /// Configured record count.
    pub fn size(self, cfg: &PipelineConfig) -> usize {
        match self {
            Split::Train => cfg.splits.train,
            Split::Val => cfg.splits.val,
            Split::Eval => cfg.splits.eval,
            Split::Finetune => cfg.splits.finetune,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown split {s:?} (train, val, eval, finetune)")))
    }
}

/// Per-record random parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordDraw {
    pub index: usize,
    pub seed: u64,
    pub target_aeration: f64,
    pub pleura_depth_m: f64,
    pub curvature_per_m: f64,
}

pub fn record_seed(master: u64, split: Split, index: usize) -> u64 {
    mix_seed(mix_seed(master, split.code()), index as u64)
}

/// Draws are a function of `(seed, split, index)` only, so any subset of
/// records can be produced in any order.
pub fn draw(cfg: &PipelineConfig, split: Split, index: usize) -> RecordDraw {
    let seed = record_seed(cfg.seed, split, index);
    let mut rng = seeded(seed, streams::RECORD);
    let p = &cfg.phantom;
    let mut uniform = |r: [f64; 2]| r[0] + (r[1] - r[0]) * rng.random::<f64>();
    let target_aeration = uniform(p.aeration);
    let pleura_depth_m = uniform(p.pleura_depth_m);
    let curved = uniform([0.0, 1.0]) < p.curved_fraction;
    let curvature = uniform(p.curvature_per_m);
    RecordDraw { index, seed, target_aeration, pleura_depth_m, curvature_per_m: if curved { curvature } else { 0.0 } }
}

pub struct Phantom {
    pub spec: PhantomSpec,
    pub map: AerationMap,
    pub assembled: AssembledMedium,
}

pub fn build_phantom(cfg: &PipelineConfig, d: &RecordDraw) -> Result<Phantom> {
    let spec = cfg.phantom_spec(d.target_aeration, d.pleura_depth_m, d.curvature_per_m, d.seed);
    let texture = generate_alveolar_texture(&spec, cfg.map_rows(), cfg.acquisition.required_columns())?;
    let map = derecruit_to_target(&texture, d.target_aeration, d.seed)?;
    let assembled = assemble_medium(&map, &spec, &cfg.medium)?;
    Ok(Phantom { spec, map, assembled })
}

/// Simulates `events` of the sequence, focused at the pleural depth.
pub fn simulate(cfg: &PipelineConfig, phantom: &Phantom, events: Range<usize>) -> Result<RfTensor> {
    acquire_range(&phantom.assembled.medium, &cfg.acquisition, phantom.spec.pleura_depth_m, events)
}

/// Lateral position of every event centre in medium columns.
pub fn event_columns(meta: &RfMeta, medium_cols: usize, dx: f64) -> Vec<f64> {
    let centre = 0.5 * (medium_cols as f64 - 1.0);
    meta.event_centers_m.iter().map(|x| centre + x / dx).collect()
}

/// Pleural depth under each event centre, interpolated between columns.
pub fn pleura_under_events(pleura_rows: &[usize], cols: &[f64], dx: f64) -> Vec<f64> {
    cols.iter()
        .map(|&c| {
            let c = c.clamp(0.0, (pleura_rows.len() - 1) as f64);
            let (j, f) = (c.floor() as usize, c.fract());
            let hi = pleura_rows[(j + 1).min(pleura_rows.len() - 1)] as f64;
            ((1.0 - f) * pleura_rows[j] as f64 + f * hi) * dx
        })
        .collect()
}

/// Chest-wall mask in B-mode geometry (samples x events): every sample
/// shallower than the pleura under its event.
pub fn wall_image(rf: &RfTensor, pleura_m: &[f64]) -> Grid<bool> {
    Grid::from_fn(rf.n_samples, rf.n_events, |i, e| sample_depth(rf, i) < pleura_m[e])
}

/// Length of the overlap of `[a0, a1)` and `[b0, b1)`.
fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Area-weighted resampling of a map onto `out_rows` depth rows and one
/// column per event. Map cell `(i, j)` spans rows `[i, i+1)` and columns
/// `[j - 1/2, j + 1/2)`; event `e` covers `width` columns centred on
/// `cols[e]`. Output values are air fractions.
pub fn target_map(map: &Grid<f64>, cols: &[f64], width: f64, out_rows: usize) -> Grid<f64> {
    let (rows, ncols) = (map.rows() as f64, map.cols());
    let half = 0.5 * width.max(1.0);
    Grid::from_fn(out_rows, cols.len(), |h, e| {
        let (r0, r1) = (h as f64 * rows / out_rows as f64, (h + 1) as f64 * rows / out_rows as f64);
        let (c0, c1) = (cols[e] - half, cols[e] + half);
        let (mut acc, mut area) = (0.0, 0.0);
        for i in r0.floor() as usize..(r1.ceil() as usize).min(map.rows()) {
            let wr = overlap(r0, r1, i as f64, i as f64 + 1.0);
            let jlo = (c0 + 0.5).floor().max(0.0) as usize;
            let jhi = ((c1 + 0.5).ceil().max(0.0) as usize).min(ncols);
            for j in jlo..jhi {
                let w = wr * overlap(c0, c1, j as f64 - 0.5, j as f64 + 0.5);
                acc += w * map[(i, j)];
                area += w;
            }
        }
        if area > 0.0 {
            acc / area
        } else {
            0.0
        }
    })
}

pub fn rf_to_tensor(rf: &RfTensor, seed: u64) -> Tensor {
    Tensor {
        dims: vec![rf.n_samples, rf.n_receivers, rf.n_events],
        data: TensorData::F64(rf.data.clone()),
        meta: json!({ "kind": "rf", "seed": seed, "rf": rf.meta }),
    }
}

pub fn rf_from_tensor(t: &Tensor) -> Result<RfTensor> {
    let [n_samples, n_receivers, n_events] = t.dims[..] else {
        return Err(Error::IncompatibleDimensions(format!("RF tensor must be 3D, got dims {:?}", t.dims)));
    };
    let TensorData::F64(data) = &t.data else {
        return Err(Error::InvalidInput("RF tensor must hold f64 samples".into()));
    };
    let meta: RfMeta = serde_json::from_value(t.meta.get("rf").cloned().unwrap_or_default())
        .map_err(|e| Error::InvalidInput(format!("RF metadata: {e}")))?;
    if meta.event_centers_m.len() != n_events || meta.element_offsets_m.len() != n_receivers {
        return Err(Error::IncompatibleDimensions("RF metadata disagrees with the tensor dims".into()));
    }
    Ok(RfTensor { n_samples, n_receivers, n_events, data: data.clone(), meta })
}

/// Aeration map tensor with the event geometry needed to rebuild targets.
pub fn map_to_tensor(map: &AerationMap, cols: &[f64], width: f64) -> Tensor {
    let data = map.grid().data().iter().map(|&v| (v > 0.5) as u8).collect();
    Tensor {
        dims: vec![map.rows(), map.cols()],
        data: TensorData::U8(data),
        meta: json!({ "kind": "aeration-map", "pitch_m": map.pitch_m(), "event_columns": cols, "event_width": width }),
    }
}

/// Map grid plus event columns and width stored alongside it.
pub fn map_from_tensor(t: &Tensor) -> Result<(Grid<f64>, Vec<f64>, f64)> {
    let grid = t.to_grid()?;
    let cols: Vec<f64> = serde_json::from_value(t.meta.get("event_columns").cloned().unwrap_or_default())
        .map_err(|e| Error::InvalidInput(format!("aeration map metadata: {e}")))?;
    let width = t.meta.get("event_width").and_then(|v| v.as_f64()).unwrap_or(1.0);
    Ok((grid, cols, width))
}

pub fn wall_to_tensor(mask: &Grid<bool>, pleura_m: &[f64]) -> Tensor {
    Tensor::from_mask(mask, json!({ "kind": "wall-mask", "pleura_depth_m": pleura_m }))
}

pub fn wall_from_tensor(t: &Tensor) -> Result<(Grid<bool>, Vec<f64>)> {
    let grid = t.to_grid()?.map(|&v| v > 0.5);
    let pleura: Vec<f64> = serde_json::from_value(t.meta.get("pleura_depth_m").cloned().unwrap_or_default())
        .map_err(|e| Error::InvalidInput(format!("wall mask metadata: {e}")))?;
    if pleura.len() != grid.cols() {
        return Err(Error::IncompatibleDimensions("one pleural depth per event expected".into()));
    }
    Ok((grid, pleura))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_reproducible_and_split_specific() {
        let cfg = PipelineConfig::tiny();
        assert_eq!(draw(&cfg, Split::Train, 3), draw(&cfg, Split::Train, 3));
        assert_ne!(draw(&cfg, Split::Train, 3).seed, draw(&cfg, Split::Eval, 3).seed);
        let d = draw(&cfg, Split::Val, 7);
        assert!((0.1..=0.9).contains(&d.target_aeration));
        assert!((0.005..=0.015).contains(&d.pleura_depth_m));
    }

    #[test]
    fn target_map_of_constant_is_constant() {
        let map = Grid::new(32, 40, 1.0);
        let t = target_map(&map, &[10.0, 10.5, 20.25], 1.0, 16);
        assert!(t.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn target_map_averages_blocks() {
        // Column 10 all air, column 11 all tissue: an event centred between
        // them sees half of each.
        let map = Grid::from_fn(8, 20, |_, j| if j == 10 { 1.0 } else { 0.0 });
        let t = target_map(&map, &[10.0, 10.5, 11.0], 1.0, 4);
        for h in 0..4 {
            assert!((t[(h, 0)] - 1.0).abs() < 1e-12);
            assert!((t[(h, 1)] - 0.5).abs() < 1e-12);
            assert!(t[(h, 2)].abs() < 1e-12);
        }
        // Rows: top half air.
        let map = Grid::from_fn(8, 20, |i, _| if i < 4 { 1.0 } else { 0.0 });
        let t = target_map(&map, &[5.0], 1.0, 3);
        // Middle output row spans rows [8/3, 16/3): half of it above row 4.
        let expect = [1.0, 0.5, 0.0];
        assert!((t[(0, 0)] - expect[0]).abs() < 1e-12);
        assert!((t[(1, 0)] - expect[1]).abs() < 1e-12, "{}", t[(1, 0)]);
        assert!((t[(2, 0)] - expect[2]).abs() < 1e-12);
    }

    #[test]
    fn pleura_interpolates_between_columns() {
        let p = pleura_under_events(&[10, 20, 30], &[0.0, 0.5, 2.0, 5.0], 0.1);
        for (a, b) in p.iter().zip([1.0, 1.5, 3.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
