//! Loading records into network-ready samples.

use std::path::Path;

use pwt_core::beamform::{apply_delays, bmode};
use pwt_core::io::Tensor as FileTensor;
use pwt_core::sequence::RfTensor;
use pwt_core::{Error, Grid, Result};
use pwt_nop::seg::{prepare_image, resize_mask};
use pwt_nop::Tensor;

use crate::config::PipelineConfig;
use crate::dataset::{DatasetManifest, RecordEntry};
use crate::records::{map_from_tensor, rf_from_tensor, target_map, wall_from_tensor};

#[derive(Clone, Debug)]
pub struct Sample {
    pub entry: RecordEntry,
    /// RF after receive delays (the network input).
    pub delayed: RfTensor,
    /// Target air fractions, `out_rows x n_events`.
    pub target: Grid<f64>,
    /// Mean of `target`.
    pub gamma: f64,
    /// True pleural depth under each event.
    pub pleura_m: Vec<f64>,
    /// Segmentation input `[1, 1, S, S]`.
    pub image: Tensor,
    /// Chest-wall mask at the segmentation size `[1, S, S]`.
    pub wall: Tensor,
}

impl Sample {
    pub fn id(&self) -> String {
        format!("rec_{:05}", self.entry.index)
    }
}

pub fn load_sample(cfg: &PipelineConfig, dir: &Path, entry: &RecordEntry) -> Result<Sample> {
    let rf = rf_from_tensor(&FileTensor::read(dir.join(&entry.rf_path))?)?;
    let net = &cfg.network;
    if rf.shape() != [net.n_samples, net.n_receivers, net.n_events] {
        return Err(Error::IncompatibleDimensions(format!(
            "record {}: RF {:?} does not match the network's {}x{}x{}",
            entry.index,
            rf.shape(),
            net.n_samples,
            net.n_receivers,
            net.n_events
        )));
    }
    let (map, cols, width) = map_from_tensor(&FileTensor::read(dir.join(&entry.aeration_map_path))?)?;
    if cols.len() != net.n_events {
        return Err(Error::IncompatibleDimensions(format!("record {}: map holds {} event columns", entry.index, cols.len())));
    }
    let (wall, pleura_m) = wall_from_tensor(&FileTensor::read(dir.join(&entry.wall_mask_path))?)?;
    if (wall.rows(), wall.cols()) != (rf.n_samples, rf.n_events) {
        return Err(Error::IncompatibleDimensions(format!("record {}: wall mask does not match the RF", entry.index)));
    }
    let target = target_map(&map, &cols, width, net.out_rows);
    let gamma = target.data().iter().sum::<f64>() / target.len() as f64;
    let s = cfg.seg.size;
    let image = prepare_image(&bmode(&rf).img, cfg.dynamic_range_db, s);
    Ok(Sample {
        entry: entry.clone(),
        delayed: apply_delays(&rf),
        target,
        gamma,
        pleura_m,
        image,
        wall: resize_mask(&wall, s),
    })
}

/// Every record of a manifest, in manifest order.
pub fn load_manifest(cfg: &PipelineConfig, path: &Path) -> Result<Vec<Sample>> {
    let (m, dir) = DatasetManifest::load(path)?;
    m.records.iter().map(|e| load_sample(cfg, &dir, e)).collect()
}
