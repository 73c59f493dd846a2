//! Run configuration: every stage's settings in one JSON document.

use std::path::{Path, PathBuf};

use pwt_core::phantom::{MediumOptions, PhantomSpec};
use pwt_core::sequence::AcquisitionConfig;
use pwt_core::{Error, Result};
use pwt_nop::augment::AugmentConfig;
use pwt_nop::optim::AdamConfig;
use pwt_nop::{LunaConfig, SegConfig};
use serde::{Deserialize, Serialize};

/// Ranges the per-record phantom parameters are drawn from, plus the fixed
/// alveolar geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomRanges {
    /// Target aeration, drawn uniformly.
    pub aeration: [f64; 2],
    /// Pleural depth at the lateral centre, drawn uniformly.
    pub pleura_depth_m: [f64; 2],
    /// Fraction of records with a curved pleura.
    pub curved_fraction: f64,
    /// Curvature range of the curved records.
    pub curvature_per_m: [f64; 2],
    pub alveolus_diameter_m: f64,
    pub alveolus_spread: f64,
    pub wall_thickness_m: f64,
    /// Depth of the aeration map below the pleura (the reconstruction target).
    pub map_depth_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the aeration term.
    pub eta: f64,
    pub adam: AdamConfig,
    pub batch: usize,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub augment: AugmentConfig,
    pub seg_epochs: usize,
    pub seg_batch: usize,
    pub seg_adam: AdamConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub eval: usize,
    pub finetune: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Desk scale factor (1 = full scale); informational once the other
    /// fields are set.
    pub scale: f64,
    pub seed: u64,
    pub phantom: PhantomRanges,
    pub medium: MediumOptions,
    pub acquisition: AcquisitionConfig,
    pub network: LunaConfig,
    pub seg: SegConfig,
    pub train: TrainConfig,
    /// B-mode dynamic range fed to segmentation and previews.
    pub dynamic_range_db: f64,
    pub splits: SplitSizes,
    pub out_dir: PathBuf,
}

const ALVEOLUS_M: f64 = 94e-6;
const ALVEOLAR_WALL_M: f64 = 16.5e-6;
/// Reconstructed depth below the pleura in wavelengths.
const MAP_WAVELENGTHS: f64 = 2.6;

fn seg_adam() -> AdamConfig {
    AdamConfig { lr: 2e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
}

impl PipelineConfig {
    /// Full-size acquisition and networks.
    pub fn full_scale() -> Self {
        let acquisition = AcquisitionConfig::full_scale();
        let eta = 0.5;
        let mut cfg = Self {
            scale: 1.0,
            seed: 0,
            phantom: PhantomRanges::scaled(&acquisition, 1.0, [0.01, 0.03]),
            medium: MediumOptions::default(),
            network: LunaConfig::full(),
            seg: SegConfig::full(),
            train: TrainConfig {
                eta,
                adam: AdamConfig::from_eta(eta),
                batch: 26,
                epochs_pretrain: 90,
                epochs_finetune: 10,
                augment: AugmentConfig::scaled(1822, 64 * 128),
                seg_epochs: 20,
                seg_batch: 8,
                seg_adam: seg_adam(),
            },
            dynamic_range_db: 60.0,
            splits: SplitSizes { train: 10_150, val: 1_450, eval: 2_900, finetune: 24 },
            out_dir: PathBuf::from("runs"),
            acquisition,
        };
        cfg.sync_network();
        cfg
    }

    /// Desk regime: frequency divided by `scale`, a 16-element aperture over
    /// 32 events and a 32-row output.
    pub fn desk(scale: f64) -> Self {
        if scale == 1.0 {
            return Self::full_scale();
        }
        let acquisition = AcquisitionConfig::desk(scale).with_aperture(16, 32);
        let t = acquisition.n_samples();
        let mut cfg = Self {
            scale,
            phantom: PhantomRanges::scaled(&acquisition, scale, [0.01, 0.03]),
            network: LunaConfig::desk(t, 16, 32, 32),
            seg: SegConfig::desk(),
            splits: SplitSizes { train: 150, val: 25, eval: 50, finetune: 10 },
            acquisition,
            ..Self::full_scale()
        };
        cfg.train.batch = 8;
        cfg.train.epochs_pretrain = 30;
        cfg.train.epochs_finetune = 5;
        cfg.train.augment = AugmentConfig::scaled(t, 16 * 32);
        cfg.train.seg_epochs = 4;
        cfg.sync_network();
        cfg
    }

    /// The smallest preset that still images a lung: scale 8, 8 receivers,
    /// 16 events, 32 us records and pleura at 0.5 to 1.5 cm. Sized so a
    /// 200-record dataset and a full training run fit in minutes on one core.
    pub fn tiny() -> Self {
        let scale = 8.0;
        let mut acquisition = AcquisitionConfig::desk(scale).with_aperture(8, 16);
        acquisition.duration_s = 32e-6;
        let t = acquisition.n_samples();
        let mut cfg = Self {
            scale,
            phantom: PhantomRanges::scaled(&acquisition, scale, [0.005, 0.015]),
            network: LunaConfig::desk(t, 8, 16, 16),
            seg: SegConfig::desk(),
            splits: SplitSizes { train: 150, val: 0, eval: 50, finetune: 10 },
            acquisition,
            ..Self::full_scale()
        };
        cfg.train.batch = 10;
        cfg.train.epochs_pretrain = 30;
        cfg.train.epochs_finetune = 5;
        // 150 records are too few for masking augmentation or the beta1 = 0
        // schedule to learn within 30 epochs.
        cfg.train.adam = AdamConfig { lr: 2e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        cfg.train.augment = AugmentConfig::OFF;
        cfg.train.seg_epochs = 4;
        cfg.sync_network();
        cfg
    }

    /// Network input shapes and the wall-channel depth scale follow the
    /// acquisition and phantom ranges.
    fn sync_network(&mut self) {
        self.network.n_samples = self.acquisition.n_samples();
        self.network.n_receivers = self.acquisition.transducer.n_active;
        self.network.n_events = self.acquisition.transducer.n_events;
        self.network.max_depth_m = self.phantom.pleura_depth_m[1];
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Grid rows of the aeration map.
    pub fn map_rows(&self) -> usize {
        (self.phantom.map_depth_m / self.acquisition.solver.dx_m).ceil() as usize
    }

    /// Depth covered by one record.
    pub fn record_depth_m(&self) -> f64 {
        0.5 * self.acquisition.solver.c_ref * self.acquisition.duration_s
    }

    /// Phantom specification for one record's draws.
    pub fn phantom_spec(&self, target_aeration: f64, pleura_depth_m: f64, curvature_per_m: f64, seed: u64) -> PhantomSpec {
        PhantomSpec {
            target_aeration,
            pleura_depth_m,
            alveolus_diameter_m: self.phantom.alveolus_diameter_m,
            alveolus_spread: self.phantom.alveolus_spread,
            wall_thickness_m: self.phantom.wall_thickness_m,
            curvature_per_m,
            pitch_m: self.acquisition.solver.dx_m,
            rng_seed: seed,
        }
    }

    /// Cross-field checks; runs before any compute.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.acquisition.validate()?;
        let tr = &self.acquisition.transducer;
        let top = tr.f_c * (1.0 + 0.5 * tr.frac_bandwidth);
        if top >= 0.5 * tr.fs_out {
            return bad(format!("pulse band edge {top:.3e} Hz is above the output Nyquist {:.3e} Hz", 0.5 * tr.fs_out));
        }
        let net = &self.network;
        let t = self.acquisition.n_samples();
        if (net.n_samples, net.n_receivers, net.n_events) != (t, tr.n_active, tr.n_events) {
            return bad(format!(
                "network expects {}x{}x{} RF, acquisition produces {t}x{}x{}",
                net.n_samples, net.n_receivers, net.n_events, tr.n_active, tr.n_events
            ));
        }
        net.validate().map_err(Error::InvalidConfig)?;
        self.seg.validate().map_err(Error::InvalidConfig)?;
        self.train.augment.validate(t, tr.n_active * tr.n_events).map_err(Error::InvalidConfig)?;

        let p = &self.phantom;
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r.iter().all(|v| v.is_finite());
        if !ordered(p.aeration) || p.aeration[0] < 0.0 || p.aeration[1] > 1.0 {
            return bad(format!("aeration range {:?} is not an interval in [0, 1]", p.aeration));
        }
        if !ordered(p.pleura_depth_m) || p.pleura_depth_m[0] <= 0.0 {
            return bad(format!("pleura depth range {:?} is not a positive interval", p.pleura_depth_m));
        }
        if !ordered(p.curvature_per_m) || p.curvature_per_m[0] < 0.0 || !(0.0..=1.0).contains(&p.curved_fraction) {
            return bad("curvature range or curved fraction out of bounds".into());
        }
        if p.pleura_depth_m[1] + p.map_depth_m > self.record_depth_m() {
            return bad(format!(
                "deepest map row at {:.4} m lies beyond the {:.4} m the record reaches",
                p.pleura_depth_m[1] + p.map_depth_m,
                self.record_depth_m()
            ));
        }
        if self.map_rows() < 16 {
            return bad(format!("map of {} rows is below the 16-row minimum", self.map_rows()));
        }
        self.phantom_spec(p.aeration[0], p.pleura_depth_m[0], p.curvature_per_m[1], 0).validate()?;

        let tc = &self.train;
        if !(tc.eta >= 0.0) || tc.batch == 0 || tc.seg_batch == 0 {
            return bad("eta must be non-negative and batch sizes positive".into());
        }
        for a in [&tc.adam, &tc.seg_adam] {
            if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
                return bad(format!("optimizer settings {a:?} out of range"));
            }
        }
        if !(self.dynamic_range_db > 0.0) {
            return bad("dynamic range must be positive".into());
        }
        Ok(())
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl PhantomRanges {
    /// Aeration 10 to 90 %, flat or gently curved pleura, alveoli scaled with
    /// the grid (never thinner than one cell) and a map 2.6 wavelengths deep.
    fn scaled(acq: &AcquisitionConfig, scale: f64, pleura_depth_m: [f64; 2]) -> Self {
        let dx = acq.solver.dx_m;
        let lambda = acq.solver.c_ref / acq.transducer.f_c;
        Self {
            aeration: [0.1, 0.9],
            pleura_depth_m,
            curved_fraction: 0.5,
            curvature_per_m: [0.0, 10.0],
            alveolus_diameter_m: (ALVEOLUS_M * scale).max(3.0 * dx),
            alveolus_spread: 0.3,
            wall_thickness_m: (ALVEOLAR_WALL_M * scale).max(dx),
            map_depth_m: MAP_WAVELENGTHS * lambda,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [PipelineConfig::full_scale(), PipelineConfig::desk(8.0), PipelineConfig::tiny()] {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn desk_shapes() {
        let d = PipelineConfig::desk(8.0);
        assert_eq!((d.network.n_receivers, d.network.n_events, d.network.out_rows), (16, 32, 32));
        assert!((200..=260).contains(&d.network.n_samples), "T = {}", d.network.n_samples);
        let t = PipelineConfig::tiny();
        assert_eq!((t.network.n_samples, t.network.n_receivers, t.network.n_events), (83, 8, 16));
    }

    #[test]
    fn json_round_trip() {
        let cfg = PipelineConfig::tiny();
        let back: PipelineConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_inconsistent_fields() {
        let mut cfg = PipelineConfig::tiny();
        cfg.acquisition.solver.dt_s *= 1.2;
        assert_eq!(cfg.validate().unwrap_err().code(), "invalid-config");

        let mut cfg = PipelineConfig::tiny();
        cfg.network.modes = cfg.network.n_samples / 2 + 2;
        assert_eq!(cfg.validate().unwrap_err().code(), "invalid-config");

        let mut cfg = PipelineConfig::tiny();
        cfg.train.augment.mask_t_max = cfg.network.n_samples + 1;
        assert_eq!(cfg.validate().unwrap_err().code(), "invalid-config");

        let mut cfg = PipelineConfig::tiny();
        cfg.phantom.pleura_depth_m = [0.01, 0.03];
        assert_eq!(cfg.validate().unwrap_err().code(), "invalid-config");

        let mut cfg = PipelineConfig::tiny();
        cfg.network.n_events = 8;
        assert_eq!(cfg.validate().unwrap_err().code(), "invalid-config");
    }
}
