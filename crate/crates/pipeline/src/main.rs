use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pwt::commands::{self, split_dir};
use pwt::{exit_code, GenerateOptions, PipelineConfig, Split};
use pwt_core::{Error, Result};

#[derive(Parser)]
#[command(name = "pwt", version, about = "Lung aeration from ultrasound RF: simulate, train, infer, evaluate")]
struct Cli {
    /// JSON configuration; defaults to the preset (or full scale).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration when no --config is given.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Desk scale factor for the desk preset (1 = full scale).
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for generation (falls back to PWT_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Desk,
    Tiny,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate phantom/RF records of one split into <out>/<split>.
    Generate {
        #[arg(long, default_value = "train")]
        split: Split,
        /// Records in the split (default: the configured split size).
        #[arg(long)]
        n: Option<usize>,
        /// Only produce records a..b of this split.
        #[arg(long, value_parser = parse_range)]
        records: Option<Range<usize>>,
        /// Only simulate events a..b, leaving shards to merge later.
        #[arg(long, value_parser = parse_range)]
        events: Option<Range<usize>>,
    },
    /// B-mode image (tensor + PGM) of one RF file.
    Beamform {
        input: PathBuf,
        #[arg(long, default_value_t = 4)]
        upsample: usize,
    },
    /// Train segmentation and reconstruction from scratch.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Aeration-loss-only training of a checkpoint.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Predicted maps and aeration for every record of a manifest.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Metrics of predictions against a manifest.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Platt calibration of a checkpoint on a manifest.
    Calibrate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Fast internal checks.
    Selftest,
}

fn parse_range(s: &str) -> std::result::Result<Range<usize>, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected a..b, got {s:?}"))?;
    let (a, b): (usize, usize) = (a.parse().map_err(|e| format!("{a:?}: {e}"))?, b.parse().map_err(|e| format!("{b:?}: {e}"))?);
    if a >= b {
        return Err(format!("empty range {s:?}"));
    }
    Ok(a..b)
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match (&cli.config, cli.preset, cli.scale) {
        (Some(path), _, _) => PipelineConfig::load(path)?,
        (None, Some(Preset::Tiny), _) => PipelineConfig::tiny(),
        (None, Some(Preset::Full), _) => PipelineConfig::full_scale(),
        (None, Some(Preset::Desk), s) => PipelineConfig::desk(s.unwrap_or(8.0)),
        (None, None, Some(s)) => PipelineConfig::desk(s),
        (None, None, None) => PipelineConfig::full_scale(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn workers(cli: &Cli) -> Result<usize> {
    if let Some(w) = cli.workers {
        return Ok(w.max(1));
    }
    match std::env::var("PWT_WORKERS") {
        Ok(v) => v.trim().parse::<usize>().map(|w| w.max(1)).map_err(|e| Error::InvalidConfig(format!("PWT_WORKERS={v:?}: {e}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn run(cli: &Cli) -> Result<i32> {
    if let Command::Selftest = cli.cmd {
        let results = commands::cmd_selftest();
        for (name, ok, detail) in &results {
            println!("{} {name}: {detail}", if *ok { "PASS" } else { "FAIL" });
        }
        return Ok(if results.iter().all(|r| r.1) { 0 } else { 2 });
    }
    let cfg = resolve_config(cli)?;
    let out: &Path = &cfg.out_dir;
    match &cli.cmd {
        Command::Generate { split, n, records, events } => {
            let opts = GenerateOptions { n: n.unwrap_or(split.size(&cfg)), records: records.clone(), events: events.clone(), workers: workers(cli)? };
            let dir = split_dir(out, *split);
            let report = commands::cmd_generate(&cfg, *split, &dir, &opts)?;
            println!(
                "{split}: {} generated, {} already complete, {} sharded, {} failed -> {}",
                report.generated.len(),
                report.skipped.len(),
                report.sharded.len(),
                report.failed.len(),
                dir.display()
            );
            for (i, e) in &report.failed {
                eprintln!("record {i}: {e}");
            }
            Ok(if report.failed.is_empty() { 0 } else { 2 })
        }
        Command::Beamform { input, upsample } => {
            let img = commands::cmd_beamform(input, out, *upsample, cfg.dynamic_range_db)?;
            println!("{}x{} image -> {}", img.rows(), img.cols(), out.join("bmode.pgm").display());
            Ok(0)
        }
        Command::Train { train, val } => {
            let h = commands::cmd_train(&cfg, train, val.as_deref(), out)?;
            if let Some(last) = h.last() {
                println!("{} epochs, final ce {:.4}, l_gamma {:.4}", h.len(), last.ce, last.l_gamma);
            }
            Ok(0)
        }
        Command::Finetune { checkpoint, train, val } => {
            let h = commands::cmd_finetune(&cfg, checkpoint, train, val.as_deref(), out)?;
            if let Some(last) = h.last() {
                println!("{} epochs, final l_gamma {:.4}", h.len(), last.l_gamma);
            }
            Ok(0)
        }
        Command::Infer { checkpoint, manifest } => {
            let g = commands::cmd_infer(&cfg, checkpoint, manifest, out)?;
            println!("{} predictions -> {}", g.len(), out.display());
            Ok(0)
        }
        Command::Evaluate { manifest, predictions } => {
            let report = commands::cmd_evaluate(&cfg, manifest, predictions, out)?;
            let mae = report.overall.aeration_error.map_or(f64::NAN, |s| s.mean);
            println!("{} samples, aeration error {mae:.4} -> {}", report.rows.len(), out.join("report.json").display());
            Ok(0)
        }
        Command::Calibrate { checkpoint, manifest } => {
            let r = commands::cmd_calibrate(&cfg, checkpoint, manifest, out)?;
            println!("a {:.4} b {:.4}, ECE {:.4} -> {:.4}", r.fit.a, r.fit.b, r.fit.ece_before, r.fit.ece_after);
            Ok(0)
        }
        Command::Selftest => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
