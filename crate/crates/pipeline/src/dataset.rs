//! Dataset manifests and record generation.
//!
//! Each record is a directory-local set of files named after its index:
//! `rec_NNNNN.rf.pwt`, `.map.pwt`, `.wall.pwt` and a `.json` sidecar written
//! last. A record counts as complete when its sidecar exists and carries the
//! expected seed, which is what makes generation resumable. Event shards
//! (`rec_NNNNN.rf.eA-B.pwt`) hold partial acquisitions and are merged into
//! the full RF on a later run without re-simulating them.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use pwt_core::io::{write_atomic, Tensor};
use pwt_core::phantom::compute_aeration;
use pwt_core::sequence::RfTensor;
use pwt_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::records::{
    build_phantom, draw, event_columns, map_to_tensor, pleura_under_events, rf_from_tensor, rf_to_tensor, simulate,
    wall_image, wall_to_tensor, RecordDraw, Split,
};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub index: usize,
    pub seed: u64,
    /// Paths relative to the manifest's directory.
    pub rf_path: String,
    pub aeration_map_path: String,
    pub wall_mask_path: String,
    /// Achieved aeration of the whole map.
    pub gamma: f64,
    pub target_aeration: f64,
    /// Pleural depth at the lateral centre.
    pub pleura_depth: f64,
    pub curvature_per_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub records: Vec<RecordEntry>,
}

/// A manifest argument may name the file or its directory.
pub fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST)
    } else {
        p.to_path_buf()
    }
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let path = manifest_path(path);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::InvalidInput(format!("manifest {}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("manifest {}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, dir))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST), text.as_bytes())
    }

    /// Every referenced file exists and has the shapes `cfg` produces.
    pub fn validate(&self, dir: &Path, cfg: &PipelineConfig) -> Result<()> {
        let tr = &cfg.acquisition.transducer;
        let rf_dims = [cfg.acquisition.n_samples(), tr.n_active, tr.n_events];
        let map_dims = [cfg.map_rows(), cfg.acquisition.required_columns()];
        let wall_dims = [rf_dims[0], rf_dims[2]];
        for r in &self.records {
            for (p, dims) in [(&r.rf_path, &rf_dims[..]), (&r.aeration_map_path, &map_dims[..]), (&r.wall_mask_path, &wall_dims[..])] {
                let t = Tensor::read(dir.join(p))?;
                if t.dims != dims {
                    return Err(Error::IncompatibleDimensions(format!(
                        "record {}: {p} has dims {:?}, configuration expects {dims:?}",
                        r.index, t.dims
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GenerateOptions {
    /// Records in the split; the manifest lists the complete ones among
    /// `0..n`.
    pub n: usize,
    /// Subset of `0..n` to produce in this run.
    pub records: Option<Range<usize>>,
    /// Simulate only these events and leave shards instead of records.
    pub events: Option<Range<usize>>,
    pub workers: usize,
}

#[derive(Debug, Default)]
pub struct GenerateReport {
    pub generated: Vec<usize>,
    pub skipped: Vec<usize>,
    pub sharded: Vec<usize>,
    pub failed: Vec<(usize, String)>,
    pub manifest: Option<DatasetManifest>,
}

fn stem(index: usize) -> String {
    format!("rec_{index:05}")
}

fn shard_name(index: usize, ev: &Range<usize>) -> String {
    format!("{}.rf.e{:04}-{:04}.pwt", stem(index), ev.start, ev.end)
}

fn sidecar(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{}.json", stem(index)))
}

/// The completed record at `index`, if its sidecar matches `seed`.
fn completed(dir: &Path, index: usize, seed: u64) -> Option<RecordEntry> {
    let text = fs::read_to_string(sidecar(dir, index)).ok()?;
    let entry: RecordEntry = serde_json::from_str(&text).ok()?;
    (entry.seed == seed && entry.index == index).then_some(entry)
}

/// Existing event shards of a record, sorted and non-overlapping.
fn shards(dir: &Path, index: usize) -> Vec<(Range<usize>, PathBuf)> {
    let prefix = format!("{}.rf.e", stem(index));
    let mut found: Vec<(Range<usize>, PathBuf)> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let range = name.strip_prefix(&prefix)?.strip_suffix(".pwt")?;
            let (a, b) = range.split_once('-')?;
            Some((a.parse().ok()?..b.parse().ok()?, e.path()))
        })
        .collect();
    found.sort_by_key(|(r, _)| (r.start, r.end));
    let mut end = 0;
    found.retain(|(r, _)| {
        let keep = r.start >= end && r.end > r.start;
        if keep {
            end = r.end;
        }
        keep
    });
    found
}

enum Outcome {
    Generated,
    Sharded,
}

/// Full RF of a record, reusing any shards and simulating the gaps.
fn full_rf(cfg: &PipelineConfig, dir: &Path, d: &RecordDraw, phantom: &crate::records::Phantom) -> Result<(RfTensor, Vec<PathBuf>)> {
    let n_e = cfg.acquisition.transducer.n_events;
    let mut parts = Vec::new();
    let mut used = Vec::new();
    let mut at = 0;
    for (range, path) in shards(dir, d.index).into_iter().filter(|(r, _)| r.end <= n_e) {
        let t = Tensor::read(&path)?;
        if t.meta.get("seed").and_then(|v| v.as_u64()) != Some(d.seed) {
            continue;
        }
        if range.start > at {
            parts.push(simulate(cfg, phantom, at..range.start)?);
        }
        parts.push(rf_from_tensor(&t)?);
        used.push(path);
        at = range.end;
    }
    if at < n_e {
        parts.push(simulate(cfg, phantom, at..n_e)?);
    }
    Ok((RfTensor::concat_events(&parts)?, used))
}

fn produce(cfg: &PipelineConfig, dir: &Path, split: Split, index: usize, events: Option<&Range<usize>>) -> Result<Outcome> {
    let d = draw(cfg, split, index);
    let phantom = build_phantom(cfg, &d)?;
    if let Some(ev) = events {
        let path = dir.join(shard_name(index, ev));
        if !path.exists() {
            let rf = simulate(cfg, &phantom, ev.clone())?;
            rf_to_tensor(&rf, d.seed).write(&path)?;
        }
        return Ok(Outcome::Sharded);
    }
    let (rf, used) = full_rf(cfg, dir, &d, &phantom)?;
    let dx = cfg.acquisition.solver.dx_m;
    let cols = event_columns(&rf.meta, phantom.map.cols(), dx);
    let width = cfg.acquisition.transducer.pitch_cells(dx) as f64;
    let pleura = pleura_under_events(&phantom.assembled.pleura_rows, &cols, dx);
    let s = stem(index);
    let entry = RecordEntry {
        index,
        seed: d.seed,
        rf_path: format!("{s}.rf.pwt"),
        aeration_map_path: format!("{s}.map.pwt"),
        wall_mask_path: format!("{s}.wall.pwt"),
        gamma: compute_aeration(&phantom.map),
        target_aeration: d.target_aeration,
        pleura_depth: d.pleura_depth_m,
        curvature_per_m: d.curvature_per_m,
    };
    rf_to_tensor(&rf, d.seed).write(dir.join(&entry.rf_path))?;
    map_to_tensor(&phantom.map, &cols, width).write(dir.join(&entry.aeration_map_path))?;
    wall_to_tensor(&wall_image(&rf, &pleura), &pleura).write(dir.join(&entry.wall_mask_path))?;
    let text = serde_json::to_string_pretty(&entry).expect("record serializes");
    write_atomic(&sidecar(dir, index), text.as_bytes())?;
    for p in used {
        fs::remove_file(p)?;
    }
    Ok(Outcome::Generated)
}

/// Produces the records of `split` into `dir` on a pool of `workers`
/// threads and writes the manifest of every complete record in `0..n`.
/// Per-record failures are logged and reported; they do not stop the run.
pub fn generate(cfg: &PipelineConfig, split: Split, dir: &Path, opts: &GenerateOptions) -> Result<GenerateReport> {
    cfg.validate()?;
    let range = opts.records.clone().unwrap_or(0..opts.n);
    if range.end > opts.n {
        return Err(Error::InvalidInput(format!("record range {range:?} outside 0..{}", opts.n)));
    }
    if let Some(ev) = &opts.events {
        if ev.is_empty() || ev.end > cfg.acquisition.transducer.n_events {
            return Err(Error::InvalidInput(format!(
                "event range {ev:?} outside 0..{}",
                cfg.acquisition.transducer.n_events
            )));
        }
    }
    fs::create_dir_all(dir)?;

    let mut report = GenerateReport::default();
    let mut todo = Vec::new();
    for index in range {
        let seed = crate::records::record_seed(cfg.seed, split, index);
        if completed(dir, index, seed).is_some() {
            report.skipped.push(index);
        } else {
            todo.push(index);
        }
    }
    log::info!("{split}: {} records to produce, {} already complete", todo.len(), report.skipped.len());

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..opts.workers.clamp(1, todo.len().max(1)) {
            let tx = tx.clone();
            let (todo, next) = (&todo, &next);
            scope.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&index) = todo.get(k) else { break };
                let out = produce(cfg, dir, split, index, opts.events.as_ref());
                if tx.send((index, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (index, out) in rx {
            match out {
                Ok(Outcome::Generated) => {
                    log::info!("{split} record {index} done");
                    report.generated.push(index);
                }
                Ok(Outcome::Sharded) => report.sharded.push(index),
                Err(e) => {
                    log::error!("{split} record {index} failed: {e}");
                    report.failed.push((index, e.to_string()));
                }
            }
        }
    });
    report.generated.sort_unstable();
    report.sharded.sort_unstable();
    report.failed.sort_unstable();

    if opts.events.is_none() {
        let records: Vec<RecordEntry> = (0..opts.n)
            .filter_map(|i| completed(dir, i, crate::records::record_seed(cfg.seed, split, i)))
            .collect();
        if records.len() < opts.n {
            log::warn!("{split}: {} of {} records complete", records.len(), opts.n);
        }
        let manifest = DatasetManifest { split, records };
        manifest.write(dir)?;
        report.manifest = Some(manifest);
    }
    Ok(report)
}
