//! Fourier features of RF traces along the time axis.

use pwt_core::sequence::RfTensor;
use rustfft::{num_complex::Complex64, FftPlanner};

/// Per-trace spectra, trace `r * n_events + e`, bin `f` at `trace * n_freq + f`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierFeatures {
    pub n_freq: usize,
    pub n_traces: usize,
    pub magnitude: Vec<f64>,
    /// Phase as (cos, sin); zero bins get phase 0.
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

/// Number of non-negative frequency bins of a length-`t` real transform.
pub fn n_freq(t: usize) -> usize {
    t / 2 + 1
}

/// Real transform of every (receiver, event) trace of `rf` along time.
pub fn temporal_fourier_features(rf: &RfTensor) -> FourierFeatures {
    let t = rf.n_samples;
    assert!(t >= 2, "need at least two time samples");
    let f = n_freq(t);
    let n_traces = rf.n_receivers * rf.n_events;
    let fft = FftPlanner::new().plan_fft_forward(t);
    let mut out = FourierFeatures {
        n_freq: f,
        n_traces,
        magnitude: vec![0.0; n_traces * f],
        cos: vec![0.0; n_traces * f],
        sin: vec![0.0; n_traces * f],
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); t];
    for r in 0..rf.n_receivers {
        for e in 0..rf.n_events {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(rf.get(i, r, e), 0.0);
            }
            fft.process(&mut buf);
            let base = (r * rf.n_events + e) * f;
            for k in 0..f {
                let z = buf[k];
                let mag = z.norm();
                out.magnitude[base + k] = mag;
                let (c, s) = if mag > 0.0 { (z.re / mag, z.im / mag) } else { (1.0, 0.0) };
                out.cos[base + k] = c;
                out.sin[base + k] = s;
            }
        }
    }
    out
}
