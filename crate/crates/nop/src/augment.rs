//! Temporal / spatial masking and additive noise for RF training inputs.

use pwt_core::sequence::RfTensor;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Upper bound of the number of leading time samples zeroed.
    pub mask_t_max: usize,
    /// Upper bound of the number of (receiver, event) traces zeroed.
    pub mask_s_max: usize,
    /// Signal-to-noise ratio of the added white noise; `None` adds none.
    pub snr_db: Option<f64>,
}

impl AugmentConfig {
    pub const OFF: Self = Self { mask_t_max: 0, mask_s_max: 0, snr_db: None };

    /// The full-size bounds (200 of 1822 samples, 2000 of 64 x 128 traces)
    /// as fractions of a `t x n_traces` record, with 30 dB noise.
    pub fn scaled(t: usize, n_traces: usize) -> Self {
        Self {
            mask_t_max: (t as f64 * 200.0 / 1822.0).round() as usize,
            mask_s_max: (n_traces as f64 * 2000.0 / 8192.0).round() as usize,
            snr_db: Some(30.0),
        }
    }

    pub fn validate(&self, t: usize, n_traces: usize) -> Result<(), String> {
        if self.mask_t_max > t {
            return Err(format!("temporal mask bound {} exceeds {t} samples", self.mask_t_max));
        }
        if self.mask_s_max > n_traces {
            return Err(format!("trace mask bound {} exceeds {n_traces} traces", self.mask_s_max));
        }
        Ok(())
    }
}

/// Zeroes the first `m ~ U{0..=M_t}` samples of every trace, zeroes
/// `m_s ~ U{0..=M_s}` distinct traces and adds white Gaussian noise at the
/// configured SNR relative to the mean power of the masked record.
pub fn augment(rf: &RfTensor, cfg: &AugmentConfig, rng: &mut impl Rng) -> RfTensor {
    let [t, n_t, n_e] = rf.shape();
    let n_traces = n_t * n_e;
    assert!(cfg.mask_t_max <= t && cfg.mask_s_max <= n_traces, "mask bounds exceed the record");
    let mut out = rf.clone();
    let m_t = rng.random_range(0..=cfg.mask_t_max);
    let row = n_traces;
    out.data[..m_t * row].iter_mut().for_each(|v| *v = 0.0);
    let m_s = rng.random_range(0..=cfg.mask_s_max);
    for tr in sample(rng, n_traces, m_s) {
        for i in 0..t {
            out.data[i * row + tr] = 0.0;
        }
    }
    if let Some(snr) = cfg.snr_db {
        let power = out.data.iter().map(|v| v * v).sum::<f64>() / out.data.len().max(1) as f64;
        let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
            out.data.iter_mut().for_each(|v| *v += normal.sample(rng));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use pwt_core::sequence::RfMeta;

    fn record(t: usize) -> RfTensor {
        let meta = RfMeta {
            fs: 1.0,
            t0: 0.0,
            pitch_m: 1.0,
            f_c: 0.1,
            c_ref: 1.0,
            element_offsets_m: vec![0.0; 4],
            event_centers_m: vec![0.0; 5],
            focal_depths_m: vec![1.0; 5],
            first_event: 0,
        };
        let mut rf = RfTensor::zeros(t, 4, 5, meta);
        rf.data.iter_mut().enumerate().for_each(|(k, v)| *v = 1.0 + (k as f64 * 0.3).sin());
        rf
    }

    #[test]
    fn disabled_is_identity() {
        let rf = record(32);
        let mut rng = pwt_core::rng::seeded(3, 0);
        assert_eq!(augment(&rf, &AugmentConfig::OFF, &mut rng), rf);
    }

    #[test]
    fn masks_zero_exactly_and_leave_the_rest() {
        let rf = record(40);
        let cfg = AugmentConfig { mask_t_max: 10, mask_s_max: 8, snr_db: None };
        for seed in 0..20 {
            let out = augment(&rf, &cfg, &mut pwt_core::rng::seeded(seed, 0));
            let mut masked_traces = 0;
            for r in 0..4 {
                for e in 0..5 {
                    let a = out.trace(r, e);
                    let b = rf.trace(r, e);
                    if a.iter().all(|&v| v == 0.0) {
                        masked_traces += 1;
                        continue;
                    }
                    let lead = a.iter().take_while(|&&v| v == 0.0).count();
                    assert!(lead <= 10);
                    assert_eq!(&a[lead..], &b[lead..]);
                }
            }
            assert!(masked_traces <= 8);
        }
    }

    #[test]
    fn deterministic_given_rng() {
        let rf = record(32);
        let cfg = AugmentConfig::scaled(32, 20);
        let a = augment(&rf, &cfg, &mut pwt_core::rng::seeded(9, 1));
        let b = augment(&rf, &cfg, &mut pwt_core::rng::seeded(9, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn measured_snr_matches() {
        let rf = record(4000);
        let cfg = AugmentConfig { mask_t_max: 0, mask_s_max: 0, snr_db: Some(30.0) };
        let out = augment(&rf, &cfg, &mut pwt_core::rng::seeded(5, 0));
        let ps = rf.data.iter().map(|v| v * v).sum::<f64>();
        let pn = out.data.iter().zip(&rf.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let snr = 10.0 * (ps / pn).log10();
        assert!((snr - 30.0).abs() < 0.5, "{snr}");
    }
}
