//! Focused walking-aperture acquisition.
//!
//! Every transmit event fires a contiguous group of elements with focusing
//! delays, runs the solver on a lateral window around the aperture and
//! records pressure at the same elements. Traces are low-pass filtered and
//! decimated to the output rate and stacked into a `T x N_t x N_e` tensor.

use std::f64::consts::PI;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::MediumMap;
use crate::solver::{self, make_absorbing_boundary, Boundary, RelaxParams, Solver, SolverConfig, Source};

/// Linear array description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransducerSpec {
    pub n_elements_total: usize,
    pub pitch_m: f64,
    pub f_c: f64,
    pub frac_bandwidth: f64,
    pub n_cycles: f64,
    pub fs_out: f64,
    pub n_active: usize,
    pub n_events: usize,
    /// Peak emitted pressure in Pa.
    pub source_pressure_pa: f64,
}

impl TransducerSpec {
    /// 64-element walking aperture, 128 events, 5.2 MHz at 70% bandwidth.
    pub fn full_scale() -> Self {
        Self {
            n_elements_total: 64 + 128 - 1,
            pitch_m: 0.195e-3,
            f_c: 5.2e6,
            frac_bandwidth: 0.70,
            n_cycles: 2.0,
            fs_out: 20.8e6,
            n_active: 64,
            n_events: 128,
            source_pressure_pa: 2.5e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.f_c > 0.0 && self.pitch_m > 0.0 && self.fs_out > 0.0) {
            return bad("frequency, pitch and sampling rate must be positive".into());
        }
        if !(self.frac_bandwidth > 0.0 && self.frac_bandwidth <= 2.0) {
            return bad(format!("fractional bandwidth {} out of range", self.frac_bandwidth));
        }
        if self.fs_out < 2.0 * self.f_c * (1.0 + self.frac_bandwidth / 2.0) {
            return bad(format!("fs_out {} Hz does not cover the pulse band", self.fs_out));
        }
        if self.n_active == 0 || self.n_events == 0 {
            return bad("aperture and event count must be positive".into());
        }
        if self.n_active > self.n_elements_total {
            return bad(format!("aperture of {} exceeds {} elements", self.n_active, self.n_elements_total));
        }
        if self.n_active + self.n_events - 1 > self.n_elements_total {
            return bad(format!(
                "{} events of a {}-element aperture need {} elements, have {}",
                self.n_events,
                self.n_active,
                self.n_active + self.n_events - 1,
                self.n_elements_total
            ));
        }
        Ok(())
    }

    /// Element pitch in whole grid cells; each element is one grid column.
    pub fn pitch_cells(&self, dx: f64) -> usize {
        ((self.pitch_m / dx).round() as usize).max(1)
    }

    /// Transmit f-number for a focus at `focal_depth`.
    pub fn f_number(&self, focal_depth: f64) -> f64 {
        focal_depth / (self.n_active as f64 * self.pitch_m)
    }
}

/// Acquisition settings: array, solver grid, record length and the lateral
/// window simulated for each event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub transducer: TransducerSpec,
    pub solver: SolverConfig,
    /// Recorded duration after the transmit reference time.
    pub duration_s: f64,
    /// Simulated columns on each side of the active aperture.
    pub lateral_margin_cells: usize,
}

impl AcquisitionConfig {
    /// Full-scale acquisition: 8 ns steps, 87.6 us records.
    pub fn full_scale() -> Self {
        let transducer = TransducerSpec::full_scale();
        let solver = SolverConfig::for_frequency(transducer.f_c, 8.0e-9, 1540.0);
        Self { transducer, solver, duration_s: 87.6e-6, lateral_margin_cells: 48 }
    }

    /// Desk regime: centre frequency and output rate divided by `scale`, grid
    /// spacing and time step multiplied by it. Physical sizes (pitch, record
    /// duration) are unchanged.
    pub fn desk(scale: f64) -> Self {
        let mut cfg = Self::full_scale();
        cfg.transducer.f_c /= scale;
        cfg.transducer.fs_out /= scale;
        cfg.solver = SolverConfig::for_frequency(cfg.transducer.f_c, 8.0e-9 * scale, 1540.0);
        cfg.lateral_margin_cells = ((48.0 / scale).round() as usize).max(solver_pml(&cfg.solver) + 4);
        cfg
    }

    /// Same acquisition with an `n_active`-element aperture walked over
    /// `n_events` positions on the smallest array that fits.
    pub fn with_aperture(mut self, n_active: usize, n_events: usize) -> Self {
        self.transducer.n_active = n_active;
        self.transducer.n_events = n_events;
        self.transducer.n_elements_total = n_active + n_events - 1;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.transducer.validate()?;
        self.solver.validate()?;
        if !(self.duration_s > 0.0) {
            return Err(Error::InvalidConfig("duration must be positive".into()));
        }
        decimation_factor(1.0 / self.solver.dt_s, self.transducer.fs_out)?;
        synth_pulse(&self.transducer, self.solver.dt_s)?;
        Ok(())
    }

    /// Output samples per trace.
    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.transducer.fs_out).round() as usize
    }

    pub fn decimation(&self) -> Result<usize> {
        decimation_factor(1.0 / self.solver.dt_s, self.transducer.fs_out)
    }

    /// Output sampling rate actually produced (solver rate over the
    /// decimation factor).
    pub fn fs_actual(&self) -> Result<f64> {
        Ok(1.0 / (self.solver.dt_s * self.decimation()? as f64))
    }

    /// Medium width that centres the full array with the lateral margin on
    /// both sides.
    pub fn required_columns(&self) -> usize {
        let pc = self.transducer.pitch_cells(self.solver.dx_m);
        (self.transducer.n_elements_total - 1) * pc + 1 + 2 * self.lateral_margin_cells
    }

    /// Band used to fit tissue attenuation: half to one and a half times the
    /// centre frequency.
    pub fn attenuation_band(&self) -> (f64, f64) {
        (0.5 * self.transducer.f_c, 1.5 * self.transducer.f_c)
    }
}

fn solver_pml(cfg: &SolverConfig) -> usize {
    match cfg.boundary {
        Boundary::Absorbing { width } => width,
        Boundary::Reflective => 0,
    }
}

/// Transmit pulse: a sinusoid under a Hann window, odd about its centre.
///
/// The window spans `max(n_cycles, 2 / frac_bandwidth)` carrier periods. A
/// Hann window of length `L` has a -6 dB spectral width of about `2 / L`, so
/// two cycles alone would give close to 100% bandwidth; the longer window
/// brings the -6 dB width to the requested fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub f_c: f64,
    pub length_s: f64,
    pub amplitude: f64,
    /// Scale from `value` to the peak of the waveform.
    norm: f64,
}

impl Pulse {
    /// Waveform value at time `t` after the start of the pulse.
    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.length_s {
            return 0.0;
        }
        self.amplitude * self.norm * Self::shape(self.f_c, self.length_s, t)
    }

    fn shape(f_c: f64, len: f64, t: f64) -> f64 {
        let win = 0.5 - 0.5 * (2.0 * PI * t / len).cos();
        win * (2.0 * PI * f_c * (t - 0.5 * len)).sin()
    }

    /// Samples at `t = n dt` for `n` up to the end of the pulse.
    pub fn samples(&self, dt: f64) -> Vec<f64> {
        let n = (self.length_s / dt).ceil() as usize + 1;
        (0..n).map(|k| self.value(k as f64 * dt)).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { amplitude: self.amplitude * factor, ..self.clone() }
    }
}

/// Builds the transmit pulse and checks that `dt` resolves it.
pub fn synth_pulse(transducer: &TransducerSpec, dt: f64) -> Result<Pulse> {
    let f_c = transducer.f_c;
    if !(f_c > 0.0 && dt > 0.0) || 1.0 / (f_c * dt) < 10.0 {
        return Err(Error::InvalidConfig(format!(
            "time step {dt} s gives fewer than 10 samples per period at {f_c} Hz"
        )));
    }
    let cycles = transducer.n_cycles.max(2.0 / transducer.frac_bandwidth);
    let len = cycles / f_c;
    // Peak of the unit shape, found on a fine grid and refined by golden
    // section around the best sample.
    let n = 4096;
    let (k, _): (usize, f64) = (0..=n)
        .map(|k| (k, Pulse::shape(f_c, len, len * k as f64 / n as f64).abs()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty");
    let (mut lo, mut hi) = (len * (k.saturating_sub(1)) as f64 / n as f64, len * (k + 1).min(n) as f64 / n as f64);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if Pulse::shape(f_c, len, a).abs() > Pulse::shape(f_c, len, b).abs() {
            hi = b;
        } else {
            lo = a;
        }
    }
    let peak = Pulse::shape(f_c, len, 0.5 * (lo + hi)).abs();
    Ok(Pulse { f_c, length_s: len, amplitude: transducer.source_pressure_pa, norm: 1.0 / peak })
}

/// Transmit delays focusing `n` elements at `focal_depth` below the aperture
/// centre. The outermost elements fire first (delay 0).
pub fn focal_delays(n: usize, focal_depth: f64, pitch: f64, c_ref: f64) -> Vec<f64> {
    let centre = 0.5 * (n as f64 - 1.0);
    let r: Vec<f64> = (0..n)
        .map(|m| {
            let x = (m as f64 - centre) * pitch;
            (focal_depth * focal_depth + x * x).sqrt()
        })
        .collect();
    let r_max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    r.iter().map(|&ri| (r_max - ri) / c_ref).collect()
}

/// One transmit-receive event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransmitEvent {
    pub event_index: usize,
    pub active_elements: Range<usize>,
    pub focal_depth_m: f64,
    pub delays_s: Vec<f64>,
}

impl TransmitEvent {
    pub fn new(event_index: usize, transducer: &TransducerSpec, focal_depth_m: f64, c_ref: f64) -> Self {
        Self {
            event_index,
            active_elements: event_index..event_index + transducer.n_active,
            focal_depth_m,
            delays_s: focal_delays(transducer.n_active, focal_depth_m, transducer.pitch_m, c_ref),
        }
    }

    /// Delay of the aperture centre (mean of the two central elements for an
    /// even aperture).
    pub fn centre_delay(&self) -> f64 {
        let n = self.delays_s.len();
        if n % 2 == 1 {
            self.delays_s[n / 2]
        } else {
            0.5 * (self.delays_s[n / 2 - 1] + self.delays_s[n / 2])
        }
    }
}

/// Columns of every array element in a medium `cols` wide, array centred.
pub fn element_columns(transducer: &TransducerSpec, dx: f64, cols: usize) -> Result<Vec<usize>> {
    let pc = transducer.pitch_cells(dx);
    let span = (transducer.n_elements_total - 1) * pc + 1;
    if span > cols {
        return Err(Error::IncompatibleDimensions(format!("array spans {span} columns, medium has {cols}")));
    }
    let first = (cols - span) / 2;
    Ok((0..transducer.n_elements_total).map(|e| first + e * pc).collect())
}

/// RF tensor `data[(t * n_t + r) * n_e + e]` with acquisition metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfTensor {
    pub n_samples: usize,
    pub n_receivers: usize,
    pub n_events: usize,
    #[serde(skip)]
    pub data: Vec<f64>,
    pub meta: RfMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfMeta {
    pub fs: f64,
    /// Round-trip time of sample 0 relative to the emission of the pulse
    /// centre at the aperture centre.
    pub t0: f64,
    pub pitch_m: f64,
    pub f_c: f64,
    pub c_ref: f64,
    /// Lateral receiver offsets from the aperture centre.
    pub element_offsets_m: Vec<f64>,
    /// Lateral position of each event's aperture centre.
    pub event_centers_m: Vec<f64>,
    pub focal_depths_m: Vec<f64>,
    /// Index of the first event in the full sequence.
    #[serde(default)]
    pub first_event: usize,
}

impl RfTensor {
    pub fn zeros(n_samples: usize, n_receivers: usize, n_events: usize, meta: RfMeta) -> Self {
        Self { n_samples, n_receivers, n_events, data: vec![0.0; n_samples * n_receivers * n_events], meta }
    }

    #[inline]
    pub fn index(&self, t: usize, r: usize, e: usize) -> usize {
        (t * self.n_receivers + r) * self.n_events + e
    }

    pub fn get(&self, t: usize, r: usize, e: usize) -> f64 {
        self.data[self.index(t, r, e)]
    }

    pub fn set(&mut self, t: usize, r: usize, e: usize, v: f64) {
        let k = self.index(t, r, e);
        self.data[k] = v;
    }

    /// Trace of receiver `r` in event `e`.
    pub fn trace(&self, r: usize, e: usize) -> Vec<f64> {
        (0..self.n_samples).map(|t| self.get(t, r, e)).collect()
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n_samples, self.n_receivers, self.n_events]
    }

    /// Joins event ranges acquired separately (in the given order).
    pub fn concat_events(parts: &[RfTensor]) -> Result<RfTensor> {
        let first = parts.first().ok_or_else(|| Error::InvalidInput("no RF parts to join".into()))?;
        let (t, r) = (first.n_samples, first.n_receivers);
        if parts.iter().any(|p| p.n_samples != t || p.n_receivers != r) {
            return Err(Error::IncompatibleDimensions("RF parts differ in samples or receivers".into()));
        }
        let n_e: usize = parts.iter().map(|p| p.n_events).sum();
        let mut meta = first.meta.clone();
        meta.event_centers_m = parts.iter().flat_map(|p| p.meta.event_centers_m.clone()).collect();
        meta.focal_depths_m = parts.iter().flat_map(|p| p.meta.focal_depths_m.clone()).collect();
        let mut out = RfTensor::zeros(t, r, n_e, meta);
        let mut e0 = 0;
        for p in parts {
            for ti in 0..t {
                for ri in 0..r {
                    for e in 0..p.n_events {
                        out.set(ti, ri, e0 + e, p.get(ti, ri, e));
                    }
                }
            }
            e0 += p.n_events;
        }
        Ok(out)
    }
}

/// Integer ratio between `fs_in` and `fs_out`, accepted within 0.5%.
pub fn decimation_factor(fs_in: f64, fs_out: f64) -> Result<usize> {
    let ratio = fs_in / fs_out;
    let k = ratio.round();
    if k < 1.0 || ((ratio - k) / k).abs() > 0.005 {
        return Err(Error::DecimationRatio { fs_in, fs_out });
    }
    Ok(k as usize)
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = 0.25 * x * x;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Zero-phase Kaiser-windowed sinc low-pass for decimation by `k`: passband
/// to 0.45 and stopband from 0.6 of the output rate, 60 dB design
/// attenuation, unit DC gain.
pub fn decimation_filter(k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    let atten = 60.0;
    let beta = 0.1102 * (atten - 8.7);
    let trans = 0.15 / k as f64;
    let n = ((atten - 8.0) / (2.285 * 2.0 * PI * trans)).ceil() as usize;
    let half = n.div_ceil(2);
    let fc = 0.525 / k as f64;
    let i0b = bessel_i0(beta);
    let mut h: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let m = i as f64 - half as f64;
            let sinc = if m == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * m).sin() / (PI * m) };
            let r = m / half as f64;
            sinc * bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Anti-alias filters `trace` (solver rate `fs_in`) and keeps every k-th
/// sample. Edges are extended with the end values.
pub fn decimate(trace: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    let k = decimation_factor(fs_in, fs_out)?;
    Ok(decimate_by(trace, k, &decimation_filter(k)))
}

fn decimate_by(trace: &[f64], k: usize, h: &[f64]) -> Vec<f64> {
    if trace.is_empty() {
        return Vec::new();
    }
    let half = (h.len() / 2) as isize;
    let last = trace.len() as isize - 1;
    (0..trace.len().div_ceil(k))
        .map(|o| {
            let centre = (o * k) as isize;
            h.iter()
                .enumerate()
                .map(|(i, &c)| {
                    let idx = (centre + i as isize - half).clamp(0, last) as usize;
                    c * trace[idx]
                })
                .sum()
        })
        .collect()
}

/// Per-class attenuation mechanisms shared by every event window.
fn tissue_relax(medium: &MediumMap, cfg: &AcquisitionConfig) -> Result<RelaxParams> {
    let none = SolverConfig { boundary: Boundary::Reflective, ..cfg.solver.clone() };
    solver::relax_for_medium(medium, &none, cfg.attenuation_band())
}

/// Geometry of one event on a medium: window columns and element cells.
struct EventLayout {
    window: Range<usize>,
    element_cols: Vec<usize>,
}

fn event_layout(cfg: &AcquisitionConfig, cols: usize, event: &TransmitEvent) -> Result<EventLayout> {
    let all = element_columns(&cfg.transducer, cfg.solver.dx_m, cols)?;
    let active = all
        .get(event.active_elements.clone())
        .ok_or_else(|| Error::InvalidInput(format!("event {} beyond the array", event.event_index)))?;
    let lo = active[0].saturating_sub(cfg.lateral_margin_cells);
    let hi = (active[active.len() - 1] + cfg.lateral_margin_cells + 1).min(cols);
    Ok(EventLayout { window: lo..hi, element_cols: active.iter().map(|c| c - lo).collect() })
}

/// Runs one event and returns receiver traces at the solver rate, one per
/// active element, `n_steps` samples each.
pub fn run_event(
    medium: &MediumMap,
    cfg: &AcquisitionConfig,
    event: &TransmitEvent,
    tissue: &RelaxParams,
    n_steps: usize,
) -> Result<Vec<Vec<f64>>> {
    let wrap = |e: Error| Error::Event { event: event.event_index, source: Box::new(e) };
    let layout = event_layout(cfg, medium.cols(), event).map_err(wrap)?;
    let pad = solver_pml(&cfg.solver);
    let local = medium.crop_cols(layout.window.start, layout.window.len()).with_top_padding(pad);
    let relax = make_absorbing_boundary(&cfg.solver, local.rows(), local.cols())
        .with_tissue(tissue.tissue.clone(), tissue.tissue_speed.clone());
    let mut solver = Solver::new(&local, &cfg.solver, &relax).map_err(wrap)?;

    let dt = cfg.solver.dt_s;
    let pulse = synth_pulse(&cfg.transducer, dt).map_err(wrap)?;
    // A sample q added on a line of sources every `pc` columns launches a
    // plane wave of about q / (2 CFL pc) each way.
    let pc = cfg.transducer.pitch_cells(cfg.solver.dx_m) as f64;
    let gain = 2.0 * cfg.solver.cfl() * pc;
    let sources: Vec<Source> = layout
        .element_cols
        .iter()
        .zip(&event.delays_s)
        .map(|(&col, &tau)| {
            let n = ((tau + pulse.length_s) / dt).ceil() as usize + 1;
            Source { cell: (pad, col), samples: (0..n).map(|k| gain * pulse.value(k as f64 * dt - tau)).collect() }
        })
        .collect();
    let receivers: Vec<(usize, usize)> = layout.element_cols.iter().map(|&c| (pad, c)).collect();
    solver.run(&sources, &receivers, n_steps).map_err(wrap)
}

fn rf_meta(cfg: &AcquisitionConfig, medium_cols: usize, events: &[TransmitEvent]) -> Result<RfMeta> {
    let tr = &cfg.transducer;
    let dx = cfg.solver.dx_m;
    let pitch = tr.pitch_cells(dx) as f64 * dx;
    let cols = element_columns(tr, dx, medium_cols)?;
    let centre = 0.5 * (medium_cols as f64 - 1.0);
    let pulse = synth_pulse(tr, cfg.solver.dt_s)?;
    let event_centers_m = events
        .iter()
        .map(|ev| {
            let a = &cols[ev.active_elements.clone()];
            (0.5 * (a[0] + a[a.len() - 1]) as f64 - centre) * dx
        })
        .collect();
    let centre_delay = events.first().map_or(0.0, TransmitEvent::centre_delay);
    let half = 0.5 * (tr.n_active as f64 - 1.0);
    Ok(RfMeta {
        fs: cfg.fs_actual()?,
        t0: -(centre_delay + 0.5 * pulse.length_s),
        pitch_m: pitch,
        f_c: tr.f_c,
        c_ref: cfg.solver.c_ref,
        element_offsets_m: (0..tr.n_active).map(|m| (m as f64 - half) * pitch).collect(),
        event_centers_m,
        focal_depths_m: events.iter().map(|e| e.focal_depth_m).collect(),
        first_event: events.first().map_or(0, |e| e.event_index),
    })
}

/// Acquires events `events` (a sub-range of `0..n_events`) focused at
/// `focal_depth_m` and assembles the decimated RF tensor. Events run in
/// parallel; the result does not depend on scheduling.
pub fn acquire_range(
    medium: &MediumMap,
    cfg: &AcquisitionConfig,
    focal_depth_m: f64,
    events: Range<usize>,
) -> Result<RfTensor> {
    cfg.validate()?;
    if events.end > cfg.transducer.n_events || events.is_empty() {
        return Err(Error::InvalidInput(format!(
            "event range {events:?} outside 0..{}",
            cfg.transducer.n_events
        )));
    }
    if !(focal_depth_m > 0.0) {
        return Err(Error::InvalidInput("focal depth must be positive".into()));
    }
    // Per-element focusing uses the grid-snapped pitch.
    let mut tr = cfg.transducer.clone();
    tr.pitch_m = tr.pitch_cells(cfg.solver.dx_m) as f64 * cfg.solver.dx_m;
    let list: Vec<TransmitEvent> =
        events.clone().map(|k| TransmitEvent::new(k, &tr, focal_depth_m, cfg.solver.c_ref)).collect();
    let meta = rf_meta(cfg, medium.cols(), &list)?;
    let tissue = tissue_relax(medium, cfg)?;
    let k = cfg.decimation()?;
    let t_out = cfg.n_samples();
    // Solver sample n sits at time n dt after the first element fires; the
    // record starts at the emission of the pulse centre.
    let n_steps = t_out * k;
    let h = decimation_filter(k);
    let traces: Vec<Result<Vec<Vec<f64>>>> = list
        .par_iter()
        .map(|ev| {
            let raw = run_event(medium, cfg, ev, &tissue, n_steps)?;
            Ok(raw.iter().map(|tr| decimate_by(tr, k, &h)[..t_out].to_vec()).collect())
        })
        .collect();
    let mut rf = RfTensor::zeros(t_out, tr.n_active, list.len(), meta);
    for (e, res) in traces.into_iter().enumerate() {
        for (r, trace) in res?.iter().enumerate() {
            for (t, &v) in trace.iter().enumerate() {
                rf.set(t, r, e, v);
            }
        }
    }
    Ok(rf)
}

/// Full sequence: every event of the configured array.
pub fn acquire(medium: &MediumMap, cfg: &AcquisitionConfig, focal_depth_m: f64) -> Result<RfTensor> {
    acquire_range(medium, cfg, focal_depth_m, 0..cfg.transducer.n_events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex64, FftPlanner};

    #[test]
    fn full_scale_constants() {
        let cfg = AcquisitionConfig::full_scale();
        assert_eq!(cfg.n_samples(), 1822);
        assert_eq!(cfg.transducer.n_active, 64);
        assert_eq!(cfg.transducer.n_events, 128);
        assert_eq!(cfg.decimation().unwrap(), 6);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn decimation_ratio_check() {
        assert_eq!(decimation_factor(125e6, 20.8e6).unwrap(), 6);
        assert_eq!(decimation_factor(100e6, 20e6).unwrap(), 5);
        assert_eq!(decimation_factor(125e6, 19.0e6).unwrap_err().code(), "decimation-ratio");
    }

    fn bandwidth_and_peak(p: &Pulse, dt: f64) -> (f64, f64) {
        let s = p.samples(dt);
        let n = 1 << 16;
        let mut buf: Vec<Complex64> = (0..n).map(|k| Complex64::new(*s.get(k).unwrap_or(&0.0), 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let mag: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm()).collect();
        let (kmax, &peak) = mag.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let lo = (0..kmax).rev().find(|&k| mag[k] < 0.5 * peak).unwrap();
        let hi = (kmax..n / 2).find(|&k| mag[k] < 0.5 * peak).unwrap();
        let df = 1.0 / (n as f64 * dt);
        ((hi - lo) as f64 * df / p.f_c, kmax as f64 * df)
    }

    #[test]
    fn pulse_bandwidth_and_peak() {
        let tr = TransducerSpec::full_scale();
        let dt = 8e-9;
        let p = synth_pulse(&tr, dt).unwrap();
        let (bw, f_peak) = bandwidth_and_peak(&p, dt);
        assert!((0.6..=0.8).contains(&bw), "bandwidth {bw}");
        let bin = 1.0 / (p.samples(dt).len() as f64 * dt);
        assert!((f_peak - tr.f_c).abs() <= bin, "peak {f_peak}");
        let s = p.samples(dt);
        let peak = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak / tr.source_pressure_pa - 1.0).abs() < 1e-3);
        let integral: f64 = s.iter().sum::<f64>() * dt;
        assert!(integral.abs() < 0.01 * peak * p.length_s);
        let doubled = p.scaled(2.0).samples(dt);
        for (a, b) in s.iter().zip(&doubled) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn pulse_needs_resolution() {
        let tr = TransducerSpec::full_scale();
        assert!(synth_pulse(&tr, 2.0e-8).is_err());
    }

    #[test]
    fn focal_delay_geometry() {
        assert_eq!(focal_delays(1, 0.01, 1e-4, 1540.0), vec![0.0]);
        // 65 elements at 0.195 mm put the edges at +-6.24 mm.
        let d = focal_delays(65, 0.01, 0.195e-3, 1540.0);
        let expected = ((0.01f64.powi(2) + 6.24e-3f64.powi(2)).sqrt() - 0.01) / 1540.0;
        assert!((d[32] - d[0] - expected).abs() < 1e-12);
        assert!((d[32] - d[0] - 1.161e-6).abs() < 1e-9);
        assert_eq!(d[0], 0.0);
        for m in 0..65 {
            assert!((d[m] - d[64 - m]).abs() < 1e-18);
        }
    }

    fn tone(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| (2.0 * PI * f * k as f64 / fs).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn decimation_response() {
        let (fs_in, fs_out) = (125e6, 20.8e6);
        let dc = decimate(&vec![3.0; 600], fs_in, fs_out).unwrap();
        assert!(dc.iter().all(|v| (v / 3.0 - 1.0).abs() < 1e-3));
        let n = 12000;
        let mid = |x: Vec<f64>| x[x.len() / 4..3 * x.len() / 4].to_vec();
        let pass = mid(decimate(&tone(0.45 * fs_out, fs_in, n), fs_in, fs_out).unwrap());
        let loss_db = -20.0 * (rms(&pass) / rms(&tone(1.0, 4.0, 4000))).log10();
        assert!(loss_db <= 1.0, "passband loss {loss_db} dB");
        let stop = mid(decimate(&tone(0.6 * fs_out, fs_in, n), fs_in, fs_out).unwrap());
        let att_db = -20.0 * (rms(&stop) / (0.5f64).sqrt()).log10();
        assert!(att_db >= 40.0, "stopband attenuation {att_db} dB");
    }
}
