//! The aeration reconstruction network.
//!
//! Per (receiver, event) trace the time axis is replaced by Fourier features
//! `[ln(1 + |P| / ref), cos, sin, wall]` over `F = T/2 + 1` bins, lifted to
//! `C` channels and processed by FNO layers along the frequency axis. A dense
//! readout maps each trace's `C x F` features to `H` depth rows; a U-shaped
//! network then mixes the receiver x event plane with the depth rows as
//! channels. Averaging over receivers and a sigmoid give the `H x N_e` map.

use pwt_core::sequence::RfTensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::{n_freq, temporal_fourier_features};
use crate::layers::{FnoLayer, UNet};
use crate::params::{kaiming_uniform, Ctx, ParamId, ParamStore};
use crate::spectral::max_modes;
use crate::tape::Var;
use crate::tensor::Tensor;

pub const N_FEATURES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LunaConfig {
    /// Time samples per trace.
    pub n_samples: usize,
    pub n_receivers: usize,
    pub n_events: usize,
    /// FNO channel width.
    pub width: usize,
    pub modes: usize,
    pub fno_layers: usize,
    /// Output depth rows.
    pub out_rows: usize,
    /// Channel ladder of the spatial network; its length minus one is the
    /// number of downsampling levels.
    pub spatial_widths: Vec<usize>,
    /// Pressure scale of the log-magnitude feature (the source pressure).
    pub magnitude_ref: f64,
    /// Depth that maps to 1 in the wall channel.
    pub max_depth_m: f64,
    /// Zero the phase channels (shift-invariant ablation).
    #[serde(default)]
    pub magnitude_only: bool,
}

impl LunaConfig {
    /// Full-size shapes: 1822 samples, 64 receivers, 128 events, two FNO
    /// layers of 32 channels and 87 modes.
    pub fn full() -> Self {
        Self {
            n_samples: 1822,
            n_receivers: 64,
            n_events: 128,
            width: 32,
            modes: 87,
            fno_layers: 2,
            out_rows: 128,
            spatial_widths: vec![64, 64, 128, 256, 256],
            magnitude_ref: 1e6,
            max_depth_m: 0.03,
            magnitude_only: false,
        }
    }

    /// Desk shapes for a `t x n_receivers x n_events` acquisition: widths
    /// divided by four and modes scaled with the number of frequency bins.
    pub fn desk(t: usize, n_receivers: usize, n_events: usize, out_rows: usize) -> Self {
        let full = Self::full();
        let f = n_freq(t);
        let modes = ((full.modes as f64 * f as f64 / n_freq(full.n_samples) as f64).round() as usize).clamp(1, max_modes(f));
        let levels = (n_receivers.min(n_events).trailing_zeros() as usize).min(2);
        let spatial_widths = [16, 32, 64][..=levels].to_vec();
        Self {
            n_samples: t,
            n_receivers,
            n_events,
            width: full.width / 4,
            modes,
            fno_layers: full.fno_layers,
            out_rows,
            spatial_widths,
            magnitude_ref: full.magnitude_ref,
            max_depth_m: full.max_depth_m,
            magnitude_only: false,
        }
    }

    pub fn n_freq(&self) -> usize {
        n_freq(self.n_samples)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_samples < 2 || self.n_receivers == 0 || self.n_events == 0 || self.out_rows == 0 || self.width == 0 {
            return Err("network dimensions must be positive (and at least two time samples)".into());
        }
        if self.modes == 0 || self.modes > self.n_samples / 2 + 1 {
            return Err(format!("{} modes outside 1..={} for {} samples", self.modes, self.n_samples / 2 + 1, self.n_samples));
        }
        if self.modes > max_modes(self.n_freq()) {
            return Err(format!(
                "{} modes exceed the {} resolvable on the {}-bin frequency axis",
                self.modes,
                max_modes(self.n_freq()),
                self.n_freq()
            ));
        }
        if self.spatial_widths.is_empty() {
            return Err("spatial network needs at least one width".into());
        }
        let f = 1 << (self.spatial_widths.len() - 1);
        if self.n_receivers % f != 0 || self.n_events % f != 0 {
            return Err(format!("{}x{} receiver/event plane not divisible by {f}", self.n_receivers, self.n_events));
        }
        if !(self.magnitude_ref > 0.0 && self.max_depth_m > 0.0) {
            return Err("magnitude reference and depth scale must be positive".into());
        }
        Ok(())
    }
}

/// One network input: delayed RF and the pleural depth under each event.
#[derive(Clone, Debug)]
pub struct LunaInput<'a> {
    pub rf: &'a RfTensor,
    pub pleura_depth_m: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct Luna {
    pub config: LunaConfig,
    lift: ParamId,
    lift_bias: ParamId,
    fno: Vec<FnoLayer>,
    readout: ParamId,
    readout_bias: ParamId,
    spatial: UNet,
}

impl Luna {
    pub fn new(config: LunaConfig, p: &mut ParamStore, rng: &mut impl Rng) -> Result<Self, String> {
        config.validate()?;
        let (c, f, h) = (config.width, config.n_freq(), config.out_rows);
        let lift = p.add("luna.lift", kaiming_uniform(&[N_FEATURES, c], N_FEATURES, rng));
        let lift_bias = p.add("luna.lift_bias", Tensor::zeros(&[c]));
        let fno = (0..config.fno_layers).map(|l| FnoLayer::new(p, &format!("luna.fno{l}"), c, c, config.modes, rng)).collect();
        let readout = p.add("luna.readout", kaiming_uniform(&[c * f, h], c * f, rng));
        let readout_bias = p.add("luna.readout_bias", Tensor::zeros(&[h]));
        let spatial = UNet::new(p, "luna.spatial", h, h, &config.spatial_widths, true, rng);
        Ok(Self { config, lift, lift_bias, fno, readout, readout_bias, spatial })
    }

    /// Checks every layer against the configured input shape without running
    /// it; returns the output map shape `[H, N_e]`.
    pub fn output_shape(&self) -> Result<[usize; 2], String> {
        let cfg = &self.config;
        for layer in &self.fno {
            layer.check_len(cfg.n_freq())?;
        }
        self.spatial.check_dims(cfg.n_receivers, cfg.n_events)?;
        Ok([cfg.out_rows, cfg.n_events])
    }

    /// Network input `[B * N_t * N_e, 4, F]` for a batch.
    pub fn features(&self, batch: &[LunaInput]) -> Tensor {
        let cfg = &self.config;
        let f = cfg.n_freq();
        let per = cfg.n_receivers * cfg.n_events;
        let mut x = Tensor::zeros(&[batch.len() * per, N_FEATURES, f]);
        for (b, item) in batch.iter().enumerate() {
            assert_eq!(
                item.rf.shape(),
                [cfg.n_samples, cfg.n_receivers, cfg.n_events],
                "RF shape differs from the network configuration"
            );
            assert_eq!(item.pleura_depth_m.len(), cfg.n_events, "one pleural depth per event");
            let ff = temporal_fourier_features(item.rf);
            for tr in 0..per {
                let e = tr % cfg.n_events;
                let wall = item.pleura_depth_m[e] / cfg.max_depth_m;
                let base = (b * per + tr) * N_FEATURES * f;
                for k in 0..f {
                    let s = tr * f + k;
                    x.data[base + k] = (ff.magnitude[s] / cfg.magnitude_ref).ln_1p();
                    if !cfg.magnitude_only {
                        x.data[base + f + k] = ff.cos[s];
                        x.data[base + 2 * f + k] = ff.sin[s];
                    }
                    x.data[base + 3 * f + k] = wall;
                }
            }
        }
        x
    }

    /// Aeration probabilities `[B, H, N_e]`.
    pub fn forward(&self, cx: &mut Ctx, batch: &[LunaInput]) -> Var {
        let x = self.features(batch);
        self.forward_features(cx, x)
    }

    pub fn forward_features(&self, cx: &mut Ctx, x: Tensor) -> Var {
        let cfg = &self.config;
        let (c, f, h) = (cfg.width, cfg.n_freq(), cfg.out_rows);
        let (nt, ne) = (cfg.n_receivers, cfg.n_events);
        let n = x.shape[0];
        let b = n / (nt * ne);
        let x = cx.tape.leaf(x);
        let lift = cx.var(self.lift);
        let y = cx.tape.channel_mix(x, lift);
        let lb = cx.var(self.lift_bias);
        let mut y = cx.tape.add_channel_bias(y, lb);
        for layer in &self.fno {
            y = layer.forward(cx, y);
        }
        let flat = cx.tape.reshape(y, &[n, c * f]);
        let ro = cx.var(self.readout);
        let z = cx.tape.matmul(flat, ro);
        let rb = cx.var(self.readout_bias);
        let z = cx.tape.add_channel_bias(z, rb);
        let z = cx.tape.reshape(z, &[b, nt * ne, h]);
        let z = cx.tape.transpose12(z);
        let z = cx.tape.reshape(z, &[b, h, nt, ne]);
        let s = self.spatial.forward(cx, z);
        let m = cx.tape.mean_axis(s, 2);
        cx.tape.sigmoid(m)
    }
}
