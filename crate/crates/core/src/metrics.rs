//! Evaluation metrics and grouped reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Absolute aeration error `|a - b|`.
pub fn aeration_error(pred: f64, truth: f64) -> f64 {
    (pred - truth).abs()
}

fn check_shape<A, B>(pred: &Grid<A>, truth: &Grid<B>) -> Result<()> {
    if pred.rows() != truth.rows() || pred.cols() != truth.cols() {
        return Err(Error::IncompatibleDimensions(format!(
            "{}x{} vs {}x{}",
            pred.rows(),
            pred.cols(),
            truth.rows(),
            truth.cols()
        )));
    }
    Ok(())
}

/// Squared error normalized by the energy of `truth`.
pub fn nmse(pred: &Grid<f64>, truth: &Grid<f64>) -> Result<f64> {
    check_shape(pred, truth)?;
    let energy: f64 = truth.data().iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::InvalidInput("nmse against an all-zero reference".into()));
    }
    let err: f64 = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(err / energy)
}

/// Peak signal-to-noise ratio in dB using the maximum of `truth` as peak.
/// Identical inputs give `f64::INFINITY`.
pub fn psnr(pred: &Grid<f64>, truth: &Grid<f64>) -> Result<f64> {
    check_shape(pred, truth)?;
    let n = truth.len() as f64;
    let mse = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = truth.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sum over every fully-contained window.
fn filter_valid(img: &[f64], rows: usize, cols: usize, w: &[f64]) -> Vec<f64> {
    let k = w.len();
    let oc = cols - k + 1;
    let or = rows - k + 1;
    let mut tmp = vec![0.0; rows * oc];
    for i in 0..rows {
        for j in 0..oc {
            tmp[i * oc + j] = (0..k).map(|t| w[t] * img[i * cols + j + t]).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for i in 0..or {
        for j in 0..oc {
            out[i * oc + j] = (0..k).map(|t| w[t] * tmp[(i + t) * oc + j]).sum();
        }
    }
    out
}

/// Mean structural similarity over all 11x11 Gaussian windows (sigma 1.5,
/// dynamic range 1) lying fully inside the image.
pub fn ssim(pred: &Grid<f64>, truth: &Grid<f64>) -> Result<f64> {
    check_shape(pred, truth)?;
    let (rows, cols) = (truth.rows(), truth.cols());
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {rows}x{cols}")));
    }
    let w = gaussian_window();
    let x = pred.data();
    let y = truth.data();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { x.iter().zip(y).map(|(&a, &b)| f(a, b)).collect() };
    let mx = filter_valid(x, rows, cols, &w);
    let my = filter_valid(y, rows, cols, &w);
    let mxx = filter_valid(&prod(&|a, _| a * a), rows, cols, &w);
    let myy = filter_valid(&prod(&|_, b| b * b), rows, cols, &w);
    let mxy = filter_valid(&prod(&|a, b| a * b), rows, cols, &w);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mx.len())
        .map(|n| {
            let (ux, uy) = (mx[n], my[n]);
            let vx = mxx[n] - ux * ux;
            let vy = myy[n] - uy * uy;
            let cxy = mxy[n] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Dice overlap of two masks; two empty masks score 1.
pub fn dice(pred: &Grid<bool>, truth: &Grid<bool>) -> Result<f64> {
    check_shape(pred, truth)?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(truth.data()) {
        inter += (a && b) as usize;
        total += a as usize + b as usize;
    }
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean predicted probability (0 for empty bins).
    pub confidence: f64,
    /// Fraction of positives (0 for empty bins).
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
}

/// Reliability diagram over `n_bins` equal-width probability bins and the
/// expected calibration error. `truths` are treated as positive when > 0.5.
pub fn calibration_curve(preds: &[f64], truths: &[f64], n_bins: usize) -> Result<CalibrationCurve> {
    if preds.len() != truths.len() {
        return Err(Error::IncompatibleDimensions(format!("{} predictions vs {} labels", preds.len(), truths.len())));
    }
    if n_bins == 0 {
        return Err(Error::InvalidInput("calibration needs at least one bin".into()));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf = vec![0.0; n_bins];
    let mut acc = vec![0.0; n_bins];
    for (&p, &t) in preds.iter().zip(truths) {
        let b = ((p * n_bins as f64) as usize).min(n_bins - 1);
        count[b] += 1;
        conf[b] += p;
        acc[b] += if t > 0.5 { 1.0 } else { 0.0 };
    }
    let n = preds.len().max(1) as f64;
    let mut ece = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            let c = count[b];
            let (confidence, accuracy) = if c > 0 { (conf[b] / c as f64, acc[b] / c as f64) } else { (0.0, 0.0) };
            ece += c as f64 / n * (accuracy - confidence).abs();
            CalibrationBin { lo: b as f64 / n_bins as f64, hi: (b + 1) as f64 / n_bins as f64, count: c, confidence, accuracy }
        })
        .collect();
    Ok(CalibrationCurve { bins, ece })
}

/// Metrics of one evaluated sample. Image metrics are absent when the sample
/// has no map (or, for SSIM, when the map is smaller than one window).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub id: String,
    pub gamma_true: f64,
    pub gamma_pred: f64,
    pub pleura_depth_m: f64,
    pub aeration_error: f64,
    pub nmse: Option<f64>,
    #[serde(with = "inf_as_string")]
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub dice: Option<f64>,
}

impl SampleRow {
    /// Computes every metric available for a predicted/true map pair.
    /// `nmse` is omitted when the truth has zero energy.
    pub fn evaluate(
        id: impl Into<String>,
        pred: &Grid<f64>,
        truth: &Grid<f64>,
        pleura_depth_m: f64,
        masks: Option<(&Grid<bool>, &Grid<bool>)>,
    ) -> Result<Self> {
        check_shape(pred, truth)?;
        let mean = |g: &Grid<f64>| g.data().iter().sum::<f64>() / g.len().max(1) as f64;
        let (gamma_pred, gamma_true) = (mean(pred), mean(truth));
        let nmse = match nmse(pred, truth) {
            Ok(v) => Some(v),
            Err(Error::InvalidInput(_)) => None,
            Err(e) => return Err(e),
        };
        let ssim = if truth.rows() >= SSIM_WINDOW && truth.cols() >= SSIM_WINDOW { Some(ssim(pred, truth)?) } else { None };
        let dice = match masks {
            Some((a, b)) => Some(dice(a, b)?),
            None => None,
        };
        Ok(Self {
            id: id.into(),
            gamma_true,
            gamma_pred,
            pleura_depth_m,
            aeration_error: aeration_error(gamma_pred, gamma_true),
            nmse,
            psnr_db: Some(psnr(pred, truth)?),
            ssim,
            dice,
        })
    }
}

/// Mean and sample standard deviation (SD 0 for a single value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { n, mean, sd })
    }
}

/// Summaries of one group of rows. PSNR excludes infinite values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub aeration_error: Option<Summary>,
    pub nmse: Option<Summary>,
    pub psnr_db: Option<Summary>,
    pub ssim: Option<Summary>,
    pub dice: Option<Summary>,
}

fn summarize(label: String, lo: f64, hi: f64, rows: &[&SampleRow]) -> GroupSummary {
    let pick = |f: &dyn Fn(&SampleRow) -> Option<f64>| -> Option<Summary> {
        let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).filter(|v| v.is_finite()).collect();
        Summary::of(&v)
    };
    GroupSummary {
        label,
        lo,
        hi,
        n: rows.len(),
        aeration_error: pick(&|r| Some(r.aeration_error)),
        nmse: pick(&|r| r.nmse),
        psnr_db: pick(&|r| r.psnr_db),
        ssim: pick(&|r| r.ssim),
        dice: pick(&|r| r.dice),
    }
}

/// Per-sample rows plus overall and grouped aggregates: true aeration in
/// deciles over [0, 1] and chest-wall depth in five equal bins over
/// `depth_range`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<SampleRow>,
    pub overall: GroupSummary,
    pub by_aeration: Vec<GroupSummary>,
    pub by_depth: Vec<GroupSummary>,
}

pub const AERATION_BINS: usize = 10;
pub const DEPTH_BINS: usize = 5;

fn bin_of(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * n as f64).floor().max(0.0) as usize).min(n - 1)
}

impl EvalReport {
    pub fn new(rows: Vec<SampleRow>, depth_range: (f64, f64)) -> Self {
        let all: Vec<&SampleRow> = rows.iter().collect();
        let overall = summarize("all".into(), 0.0, 1.0, &all);
        let grouped = |n: usize, lo: f64, hi: f64, key: &dyn Fn(&SampleRow) -> f64, name: &str| -> Vec<GroupSummary> {
            (0..n)
                .map(|b| {
                    let members: Vec<&SampleRow> = rows.iter().filter(|r| bin_of(key(r), lo, hi, n) == b).collect();
                    let width = (hi - lo) / n as f64;
                    let (blo, bhi) = (lo + b as f64 * width, lo + (b + 1) as f64 * width);
                    summarize(format!("{name}[{blo:.4},{bhi:.4})"), blo, bhi, &members)
                })
                .collect()
        };
        let by_aeration = grouped(AERATION_BINS, 0.0, 1.0, &|r| r.gamma_true, "aeration");
        let by_depth = grouped(DEPTH_BINS, depth_range.0, depth_range.1, &|r| r.pleura_depth_m, "depth");
        Self { rows, overall, by_aeration, by_depth }
    }

    /// Per-sample rows as CSV. Missing values are empty fields; an infinite
    /// PSNR is written as `inf`.
    pub fn rows_csv(&self) -> String {
        let opt = |v: Option<f64>| match v {
            None => String::new(),
            Some(x) if x.is_infinite() => "inf".into(),
            Some(x) => format!("{x}"),
        };
        let mut out = String::from("id,gamma_true,gamma_pred,pleura_depth_m,aeration_error,nmse,psnr_db,ssim,dice\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.id,
                r.gamma_true,
                r.gamma_pred,
                r.pleura_depth_m,
                r.aeration_error,
                opt(r.nmse),
                opt(r.psnr_db),
                opt(r.ssim),
                opt(r.dice)
            ));
        }
        out
    }

    /// Group summaries as CSV (`group,label,n,metric_mean,metric_sd,...`).
    pub fn groups_csv(&self) -> String {
        let mut out = String::from("group,label,n");
        for m in ["aeration_error", "nmse", "psnr_db", "ssim", "dice"] {
            out.push_str(&format!(",{m}_mean,{m}_sd"));
        }
        out.push('\n');
        let fmt = |s: &Option<Summary>| s.map_or(",".to_string(), |s| format!("{},{}", s.mean, s.sd));
        let mut line = |group: &str, g: &GroupSummary| {
            out.push_str(&format!(
                "{group},{},{},{},{},{},{},{}\n",
                g.label,
                g.n,
                fmt(&g.aeration_error),
                fmt(&g.nmse),
                fmt(&g.psnr_db),
                fmt(&g.ssim),
                fmt(&g.dice)
            ));
        };
        line("overall", &self.overall);
        for g in &self.by_aeration {
            line("aeration", g);
        }
        for g in &self.by_depth {
            line("depth", g);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Serializes an infinite value as the string `"inf"` (JSON has no infinity).
mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_infinite() => Repr::Text(if *x > 0.0 { "inf" } else { "-inf" }.into()).serialize(s),
            Some(x) => Repr::Num(*x).serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(match Option::<Repr>::deserialize(d)? {
            None => None,
            Some(Repr::Num(x)) => Some(x),
            Some(Repr::Text(t)) if t == "inf" => Some(f64::INFINITY),
            Some(Repr::Text(t)) if t == "-inf" => Some(f64::NEG_INFINITY),
            Some(Repr::Text(t)) => return Err(serde::de::Error::custom(format!("unexpected value {t}"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Grid<f64> {
        Grid::from_fn(rows, cols, f)
    }

    #[test]
    fn aeration_error_anchors() {
        assert_eq!(aeration_error(0.4, 0.4), 0.0);
        assert!((aeration_error(0.506, 0.6) - 0.094).abs() < 1e-12);
        assert_eq!(aeration_error(0.2, 0.7), aeration_error(0.7, 0.2));
    }

    #[test]
    fn nmse_anchors() {
        let t = g(4, 5, |i, j| (i * 5 + j) as f64 * 0.1 - 0.7);
        assert_eq!(nmse(&t, &t).unwrap(), 0.0);
        assert!((nmse(&t.map(|_| 0.0), &t).unwrap() - 1.0).abs() < 1e-15);
        assert!((nmse(&t.map(|v| 2.0 * v), &t).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nmse(&t, &t.map(|_| 0.0)).unwrap_err().code(), "invalid-input");
        assert_eq!(nmse(&t, &g(5, 4, |_, _| 1.0)).unwrap_err().code(), "incompatible-dimensions");
    }

    #[test]
    fn psnr_anchors() {
        let mut t = g(10, 10, |_, _| 0.5);
        t[(0, 0)] = 1.0;
        // Every pixel off by 0.1 gives MSE 0.01.
        let p = t.map(|v| v + 0.1);
        assert!((psnr(&p, &t).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&t, &t).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_anchors() {
        let t = g(16, 16, |i, j| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        assert!((ssim(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        let checker = g(16, 16, |i, j| ((i + j) % 2) as f64);
        let inverted = checker.map(|v| 1.0 - v);
        assert!(ssim(&inverted, &checker).unwrap() < 0.5);
        let c = g(12, 12, |_, _| 0.3);
        let ce = c.map(|v| v + 1e-6);
        assert!((ssim(&ce, &c).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(ssim(&g(10, 20, |_, _| 0.0), &g(10, 20, |_, _| 0.0)).unwrap_err().code(), "invalid-input");
    }

    #[test]
    fn dice_anchors() {
        let a = Grid::from_fn(4, 4, |i, _| i < 2);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = a.map(|v| !v);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let half = Grid::from_fn(4, 4, |i, _| (1..3).contains(&i));
        assert_eq!(dice(&a, &half).unwrap(), 0.5);
        let empty = Grid::from_fn(4, 4, |_, _| false);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn calibration_anchors() {
        let truths = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        assert_eq!(calibration_curve(&truths, &truths, 10).unwrap().ece, 0.0);
        let half = [0.5; 6];
        assert!(calibration_curve(&half, &truths, 10).unwrap().ece.abs() < 1e-15);
        let high = [0.9; 6];
        let c = calibration_curve(&high, &truths, 10).unwrap();
        assert!((c.ece - 0.4).abs() < 1e-12);
        assert_eq!(c.bins[9].count, 6);
        assert_eq!(c.bins.len(), 10);
    }

    #[test]
    fn report_groups_and_serialization() {
        let truth = g(12, 12, |i, _| if i < 6 { 1.0 } else { 0.0 });
        let pred = truth.map(|v| 0.8 * v + 0.1);
        let rows = vec![
            SampleRow::evaluate("a", &pred, &truth, 0.012, None).unwrap(),
            SampleRow::evaluate("b", &truth, &truth, 0.028, None).unwrap(),
        ];
        assert_eq!(rows[1].psnr_db, Some(f64::INFINITY));
        let report = EvalReport::new(rows, (0.01, 0.03));
        assert_eq!(report.overall.n, 2);
        assert_eq!(report.by_aeration[5].n, 2);
        assert_eq!(report.by_depth[0].n, 1);
        assert_eq!(report.by_depth[4].n, 1);
        // Infinite PSNR is excluded from the mean.
        assert_eq!(report.overall.psnr_db.unwrap().n, 1);
        let json = report.to_json();
        assert!(json.contains("\"inf\""));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.rows, report.rows);
        assert_eq!(report.rows_csv().lines().count(), 3);
        assert!(report.rows_csv().contains(",inf,"));
        assert_eq!(report.groups_csv().lines().count(), 1 + 1 + AERATION_BINS + DEPTH_BINS);
    }
}
