//! Aeration-map phantoms and layered chest-wall media.
//!
//! An [`AerationMap`] holds 1 for air and 0 for non-air. Ground truth maps are
//! binary; network predictions are probabilities on the same grid. The lung
//! texture is a jittered hexagonal Voronoi tessellation whose cells are the
//! alveoli and whose thickened cell boundaries are the alveolar walls.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::{self, streams};

/// Air/tissue map of the lung region with isotropic pixel pitch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AerationMap {
    grid: Grid<f64>,
    pitch_m: f64,
}

impl AerationMap {
    pub fn new(grid: Grid<f64>, pitch_m: f64) -> Result<Self> {
        if grid.rows() == 0 || grid.cols() == 0 {
            return Err(Error::InvalidMap("empty aeration map".into()));
        }
        if !(pitch_m > 0.0 && pitch_m.is_finite()) {
            return Err(Error::InvalidMap(format!("pitch must be positive, got {pitch_m}")));
        }
        if let Some(v) = grid.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidMap(format!("value {v} outside [0, 1]")));
        }
        Ok(Self { grid, pitch_m })
    }

    /// Binary map from a predicate that returns `true` for air.
    pub fn from_fn(rows: usize, cols: usize, pitch_m: f64, air: impl Fn(usize, usize) -> bool) -> Result<Self> {
        Self::new(Grid::from_fn(rows, cols, |i, j| if air(i, j) { 1.0 } else { 0.0 }), pitch_m)
    }

    pub fn filled(rows: usize, cols: usize, pitch_m: f64, value: f64) -> Result<Self> {
        Self::new(Grid::new(rows, cols, value), pitch_m)
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    pub fn rows(&self) -> usize {
        self.grid.rows()
    }

    pub fn cols(&self) -> usize {
        self.grid.cols()
    }

    pub fn pitch_m(&self) -> f64 {
        self.pitch_m
    }

    pub fn is_air(&self, i: usize, j: usize) -> bool {
        self.grid[(i, j)] >= 0.5
    }

    pub fn is_binary(&self) -> bool {
        self.grid.data().iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn air_count(&self) -> usize {
        self.grid.data().iter().filter(|&&v| v >= 0.5).count()
    }

    /// Nearest-neighbour resampling onto `rows x cols` (keeps binary maps binary).
    pub fn resample_nearest(&self, rows: usize, cols: usize) -> Result<Self> {
        let (r0, c0) = (self.rows(), self.cols());
        let grid = Grid::from_fn(rows, cols, |i, j| {
            let si = (((i as f64 + 0.5) * r0 as f64 / rows as f64) as usize).min(r0 - 1);
            let sj = (((j as f64 + 0.5) * c0 as f64 / cols as f64) as usize).min(c0 - 1);
            self.grid[(si, sj)]
        });
        let pitch = self.pitch_m * r0 as f64 / rows as f64;
        Self::new(grid, pitch)
    }
}

/// Statistical description of one phantom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    /// Target air fraction of the lung region.
    pub target_aeration: f64,
    /// Pleural depth below the transducer at the lateral centre.
    pub pleura_depth_m: f64,
    /// Mean alveolar size (linear intercept).
    pub alveolus_diameter_m: f64,
    /// Relative spread of alveolar size, 0 gives a near-regular lattice.
    pub alveolus_spread: f64,
    pub wall_thickness_m: f64,
    /// Inverse radius of the pleural arc; 0 is a flat pleura.
    pub curvature_per_m: f64,
    pub pitch_m: f64,
    pub rng_seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.target_aeration) {
            return bad(format!("target aeration {} outside [0, 1]", self.target_aeration));
        }
        if !(self.pleura_depth_m > 0.0) {
            return bad("pleura depth must be positive".into());
        }
        if !(self.pitch_m > 0.0) {
            return bad("pitch must be positive".into());
        }
        if !(self.wall_thickness_m >= self.pitch_m * (1.0 - 1e-9)) {
            return bad("alveolar wall must be at least one pixel thick".into());
        }
        if !(self.alveolus_diameter_m > self.wall_thickness_m) {
            return bad("alveolus diameter must exceed wall thickness".into());
        }
        if !(0.0..=1.0).contains(&self.alveolus_spread) {
            return bad("alveolus spread must be in [0, 1]".into());
        }
        if self.curvature_per_m < 0.0 || !self.curvature_per_m.is_finite() {
            return bad("curvature must be non-negative".into());
        }
        Ok(())
    }
}

/// Jittered hexagonal seed lattice used for the Voronoi alveoli.
struct SeedLattice {
    spacing: f64,
    row_step: f64,
    n_cols: usize,
    seeds: Vec<(f64, f64)>,
}

const LATTICE_PAD: i64 = 3;

impl SeedLattice {
    fn new(spec: &PhantomSpec, rows: usize, cols: usize, spacing: f64) -> Self {
        let row_step = spacing * 3f64.sqrt() / 2.0;
        let n_rows = (rows as f64 / row_step).ceil() as usize + 2 * LATTICE_PAD as usize + 1;
        let n_cols = (cols as f64 / spacing).ceil() as usize + 2 * LATTICE_PAD as usize + 1;
        let jitter = 0.5 * spacing * (0.2 + 0.5 * spec.alveolus_spread).min(0.45);
        let mut rng = rng::seeded(spec.rng_seed, streams::TEXTURE);
        let mut seeds = Vec::with_capacity(n_rows * n_cols);
        for r in 0..n_rows {
            let lr = r as i64 - LATTICE_PAD;
            let offset = if lr.rem_euclid(2) == 1 { 0.5 * spacing } else { 0.0 };
            for c in 0..n_cols {
                let lc = c as i64 - LATTICE_PAD;
                let y = lr as f64 * row_step + rng.random_range(-jitter..=jitter);
                let x = lc as f64 * spacing + offset + rng.random_range(-jitter..=jitter);
                seeds.push((y, x));
            }
        }
        Self { spacing, row_step, n_cols, seeds }
    }

    fn candidates(&self, y: f64, x: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let r0 = (y / self.row_step).round() as i64 + LATTICE_PAD;
        let c0 = (x / self.spacing).round() as i64 + LATTICE_PAD;
        let n_rows = (self.seeds.len() / self.n_cols) as i64;
        (r0 - 2..=r0 + 2).flat_map(move |r| {
            (c0 - 2..=c0 + 2).filter_map(move |c| {
                (r >= 0 && r < n_rows && c >= 0 && c < self.n_cols as i64)
                    .then(|| self.seeds[r as usize * self.n_cols + c as usize])
            })
        })
    }

    /// Distance from `(y, x)` to the nearest Voronoi edge of its own cell.
    fn edge_distance(&self, y: f64, x: f64) -> f64 {
        let d2 = |s: (f64, f64)| (s.0 - y).powi(2) + (s.1 - x).powi(2);
        let nearest = self
            .candidates(y, x)
            .min_by(|a, b| d2(*a).total_cmp(&d2(*b)))
            .expect("lattice covers the map");
        let dn = d2(nearest);
        self.candidates(y, x)
            .filter(|&s| s != nearest)
            .map(|s| {
                let sep = ((s.0 - nearest.0).powi(2) + (s.1 - nearest.1).powi(2)).sqrt();
                (d2(s) - dn) / (2.0 * sep)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Procedural alveolar texture: Voronoi cells of air separated by tissue walls.
///
/// The seed spacing is chosen so the mean horizontal air chord (the linear
/// intercept) matches `alveolus_diameter_m`: for convex cells the mean chord
/// is `pi * area / perimeter`, which is `pi/4` of the inscribed diameter for
/// the hexagons this lattice produces.
pub fn generate_alveolar_texture(spec: &PhantomSpec, rows: usize, cols: usize) -> Result<AerationMap> {
    spec.validate()?;
    let diameter = spec.alveolus_diameter_m / spec.pitch_m;
    let wall = spec.wall_thickness_m / spec.pitch_m;
    if rows < 16 || cols < 16 {
        return Err(Error::PhantomTooSmall(format!("{rows}x{cols} is below the 16x16 minimum")));
    }
    if diameter + wall > rows.min(cols) as f64 {
        return Err(Error::PhantomTooSmall(format!(
            "alveolus of {diameter:.1} px plus wall {wall:.1} px does not fit in {rows}x{cols}"
        )));
    }
    let spacing = 4.0 * diameter / PI + wall;
    let lattice = SeedLattice::new(spec, rows, cols, spacing);
    let half_wall = 0.5 * wall;
    AerationMap::from_fn(rows, cols, spec.pitch_m, |i, j| {
        lattice.edge_distance(i as f64 + 0.5, j as f64 + 0.5) >= half_wall
    })
}

/// Pixels flipped in one derecruitment pass (row-major indices).
#[derive(Clone, Debug, PartialEq)]
pub struct DerecruitPass {
    /// `true` when air was converted to tissue.
    pub to_tissue: bool,
    pub flipped: Vec<usize>,
}

/// Number of air pixels a map of `total` pixels must hold for `target`
/// aeration, rounding half up.
pub fn target_air_count(target: f64, total: usize) -> usize {
    ((target * total as f64 + 0.5).floor() as usize).min(total)
}

fn interface_pixels(grid: &Grid<f64>, source_is_air: bool) -> Vec<usize> {
    let (rows, cols) = (grid.rows(), grid.cols());
    let is_source = |i: usize, j: usize| (grid[(i, j)] >= 0.5) == source_is_air;
    let mut out = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            if !is_source(i, j) {
                continue;
            }
            let touches = (i > 0 && !is_source(i - 1, j))
                || (i + 1 < rows && !is_source(i + 1, j))
                || (j > 0 && !is_source(i, j - 1))
                || (j + 1 < cols && !is_source(i, j + 1));
            if touches {
                out.push(i * cols + j);
            }
        }
    }
    out
}

/// Uniform derecruitment (or recruitment) along air/tissue interfaces until
/// the map reaches `target` aeration.
///
/// Each pass collects the pixels of the class being removed that touch the
/// other class (4-neighbourhood). If the pass needs at least that many, all
/// of them flip and another pass follows; otherwise the required number is
/// drawn uniformly without replacement. A map with no interface at all (all
/// air or all tissue) falls back to drawing from the whole class.
pub fn derecruit_to_target(map: &AerationMap, target: f64, rng_seed: u64) -> Result<AerationMap> {
    derecruit_to_target_traced(map, target, rng_seed).map(|(m, _)| m)
}

/// [`derecruit_to_target`] that also reports the pixels flipped in every pass.
pub fn derecruit_to_target_traced(
    map: &AerationMap,
    target: f64,
    rng_seed: u64,
) -> Result<(AerationMap, Vec<DerecruitPass>)> {
    if !map.is_binary() {
        return Err(Error::InvalidMap("derecruitment needs a binary map".into()));
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidInput(format!("target aeration {target} outside [0, 1]")));
    }
    let mut rng = rng::seeded(rng_seed, streams::DERECRUIT);
    let mut grid = map.grid().clone();
    let wanted = target_air_count(target, grid.len());
    let mut passes = Vec::new();
    loop {
        let current = grid.data().iter().filter(|&&v| v >= 0.5).count();
        if current == wanted {
            break;
        }
        let to_tissue = current > wanted;
        let need = current.abs_diff(wanted);
        let mut candidates = interface_pixels(&grid, to_tissue);
        if candidates.is_empty() {
            let class = if to_tissue { 1.0 } else { 0.0 };
            candidates = (0..grid.len()).filter(|&k| grid.data()[k] == class).collect();
        }
        let flipped: Vec<usize> = if need >= candidates.len() {
            candidates
        } else {
            let mut picked: Vec<usize> =
                rand::seq::index::sample(&mut rng, candidates.len(), need).into_iter().map(|k| candidates[k]).collect();
            picked.sort_unstable();
            picked
        };
        let value = if to_tissue { 0.0 } else { 1.0 };
        for &k in &flipped {
            grid.data_mut()[k] = value;
        }
        passes.push(DerecruitPass { to_tissue, flipped });
    }
    Ok((AerationMap::new(grid, map.pitch_m())?, passes))
}

/// Air fraction of the map: the mean of all pixel values.
pub fn compute_aeration(map: &AerationMap) -> f64 {
    let g = map.grid();
    g.data().iter().sum::<f64>() / g.len() as f64
}

/// Per-column air fraction (the lateral aeration profile).
pub fn column_aeration(map: &AerationMap) -> Vec<f64> {
    let g = map.grid();
    (0..g.cols())
        .map(|j| (0..g.rows()).map(|i| g[(i, j)]).sum::<f64>() / g.rows() as f64)
        .collect()
}

/// Tissue classes of the medium; the discriminant is the attenuation class
/// label stored in [`MediumMap::atten_class`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tissue {
    Connective = 0,
    Adipose = 1,
    Muscle = 2,
    Lung = 3,
}

impl Tissue {
    pub const ALL: [Tissue; 4] = [Tissue::Connective, Tissue::Adipose, Tissue::Muscle, Tissue::Lung];
}

/// Acoustic properties of one tissue class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TissueProps {
    pub c: f64,
    pub rho: f64,
    pub b_over_a: f64,
    /// Power-law attenuation coefficient in dB/(cm MHz^power).
    pub alpha0_db_cm_mhz: f64,
    pub power: f64,
}

impl TissueProps {
    pub fn beta(&self) -> f64 {
        1.0 + self.b_over_a
    }
}

/// Literature defaults; none of these are measured values for a specific
/// subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TissueTable {
    pub connective: TissueProps,
    pub adipose: TissueProps,
    pub muscle: TissueProps,
    pub lung: TissueProps,
}

impl Default for TissueTable {
    fn default() -> Self {
        let t = |c, rho, alpha0| TissueProps { c, rho, b_over_a: 6.0, alpha0_db_cm_mhz: alpha0, power: 1.0 };
        Self {
            connective: t(1613.0, 1120.0, 0.8),
            adipose: t(1450.0, 950.0, 0.5),
            muscle: t(1580.0, 1050.0, 1.0),
            lung: t(1540.0, 1000.0, 0.6),
        }
    }
}

impl TissueTable {
    pub fn get(&self, tissue: Tissue) -> &TissueProps {
        match tissue {
            Tissue::Connective => &self.connective,
            Tissue::Adipose => &self.adipose,
            Tissue::Muscle => &self.muscle,
            Tissue::Lung => &self.lung,
        }
    }

    /// Copy with every attenuation coefficient set to zero.
    pub fn lossless(&self) -> Self {
        let z = |p: &TissueProps| TissueProps { alpha0_db_cm_mhz: 0.0, ..*p };
        Self { connective: z(&self.connective), adipose: z(&self.adipose), muscle: z(&self.muscle), lung: z(&self.lung) }
    }
}

/// Chest-wall bands from the skin down to the parietal pleura, as relative
/// thicknesses of the local wall depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallLayers {
    pub bands: Vec<(Tissue, f64)>,
}

impl Default for WallLayers {
    fn default() -> Self {
        Self {
            bands: vec![
                (Tissue::Connective, 0.10),
                (Tissue::Adipose, 0.30),
                (Tissue::Muscle, 0.45),
                (Tissue::Connective, 0.15),
            ],
        }
    }
}

impl WallLayers {
    fn tissue_at(&self, frac: f64) -> Tissue {
        let total: f64 = self.bands.iter().map(|b| b.1).sum();
        let mut acc = 0.0;
        for &(tissue, w) in &self.bands {
            acc += w / total;
            if frac < acc {
                return tissue;
            }
        }
        self.bands.last().map(|b| b.0).unwrap_or(Tissue::Connective)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumOptions {
    pub tissues: TissueTable,
    pub layers: WallLayers,
    /// Relative standard deviation of the sub-resolution density scatterers.
    pub scatter_std: f64,
    /// Extra non-aerated lung rows below the aeration map (hosts the
    /// absorbing layer).
    pub bottom_rows: usize,
}

impl Default for MediumOptions {
    fn default() -> Self {
        Self { tissues: TissueTable::default(), layers: WallLayers::default(), scatter_std: 0.02, bottom_rows: 16 }
    }
}

/// Power-law attenuation of one class, dB/(cm MHz^power).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub alpha0_db_cm_mhz: f64,
    pub power: f64,
}

/// Per-cell acoustic properties consumed by the solver.
///
/// Air cells carry lung-tissue `rho0`/`c0` placeholders; the solver pins the
/// pressure there to zero so those values only enter face averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumMap {
    pub pitch_m: f64,
    pub rho0: Grid<f64>,
    pub c0: Grid<f64>,
    pub beta: Grid<f64>,
    pub atten_class: Grid<u8>,
    pub air_mask: Grid<bool>,
    /// Attenuation law indexed by `atten_class`.
    pub attenuation: Vec<PowerLaw>,
}

impl MediumMap {
    /// Uniform lossless medium.
    pub fn homogeneous(rows: usize, cols: usize, pitch_m: f64, c: f64, rho: f64, beta: f64) -> Self {
        Self {
            pitch_m,
            rho0: Grid::new(rows, cols, rho),
            c0: Grid::new(rows, cols, c),
            beta: Grid::new(rows, cols, beta),
            atten_class: Grid::new(rows, cols, 0),
            air_mask: Grid::new(rows, cols, false),
            attenuation: vec![PowerLaw { alpha0_db_cm_mhz: 0.0, power: 1.0 }],
        }
    }

    pub fn rows(&self) -> usize {
        self.rho0.rows()
    }

    pub fn cols(&self) -> usize {
        self.rho0.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rho0.same_shape(&self.c0)
            && self.rho0.same_shape(&self.beta)
            && self.rho0.same_shape(&self.atten_class)
            && self.rho0.same_shape(&self.air_mask);
        if !ok {
            return Err(Error::IncompatibleDimensions("medium grids differ in shape".into()));
        }
        if !(self.pitch_m > 0.0) {
            return Err(Error::InvalidConfig("medium pitch must be positive".into()));
        }
        for k in 0..self.rho0.len() {
            let (rho, c) = (self.rho0.data()[k], self.c0.data()[k]);
            if !(rho > 0.0 && c > 0.0 && rho.is_finite() && c.is_finite()) {
                return Err(Error::InvalidConfig(format!("non-positive rho0/c0 at cell {k}")));
            }
            if self.atten_class.data()[k] as usize >= self.attenuation.len() {
                return Err(Error::InvalidConfig(format!("attenuation class out of range at cell {k}")));
            }
        }
        Ok(())
    }

    pub fn mirrored_lr(&self) -> Self {
        Self {
            pitch_m: self.pitch_m,
            rho0: self.rho0.mirrored_lr(),
            c0: self.c0.mirrored_lr(),
            beta: self.beta.mirrored_lr(),
            atten_class: self.atten_class.mirrored_lr(),
            air_mask: self.air_mask.mirrored_lr(),
            attenuation: self.attenuation.clone(),
        }
    }

    pub fn crop_cols(&self, c0: usize, width: usize) -> Self {
        Self {
            pitch_m: self.pitch_m,
            rho0: self.rho0.crop_cols(c0, width),
            c0: self.c0.crop_cols(c0, width),
            beta: self.beta.crop_cols(c0, width),
            atten_class: self.atten_class.crop_cols(c0, width),
            air_mask: self.air_mask.crop_cols(c0, width),
            attenuation: self.attenuation.clone(),
        }
    }

    /// Copy with `n` rows replicating the first row prepended (a coupling
    /// stand-off above the skin).
    pub fn with_top_padding(&self, n: usize) -> Self {
        fn pad<T: Clone>(g: &Grid<T>, n: usize) -> Grid<T> {
            Grid::from_fn(g.rows() + n, g.cols(), |i, j| g[(i.saturating_sub(n), j)].clone())
        }
        Self {
            pitch_m: self.pitch_m,
            rho0: pad(&self.rho0, n),
            c0: pad(&self.c0, n),
            beta: pad(&self.beta, n),
            atten_class: pad(&self.atten_class, n),
            air_mask: pad(&self.air_mask, n),
            attenuation: self.attenuation.clone(),
        }
    }

    pub fn is_lossless(&self) -> bool {
        self.attenuation.iter().all(|a| a.alpha0_db_cm_mhz == 0.0)
    }
}

/// Output of [`assemble_medium`].
#[derive(Clone, Debug)]
pub struct AssembledMedium {
    pub medium: MediumMap,
    /// Chest-wall ground truth for the segmentation network.
    pub chest_wall: Grid<bool>,
    /// Cells carrying the aeration map.
    pub lung_region: Grid<bool>,
    /// First lung row of every column.
    pub pleura_rows: Vec<usize>,
}

/// Pleural row per column for a pleura `depth` at the lateral centre bending
/// away from the probe with inverse radius `curvature`.
pub fn pleura_profile(cols: usize, pitch_m: f64, depth_m: f64, curvature_per_m: f64) -> Vec<usize> {
    let centre = 0.5 * (cols as f64 - 1.0);
    (0..cols)
        .map(|j| {
            let x = (j as f64 - centre) * pitch_m;
            let depth = depth_m + 0.5 * curvature_per_m * x * x;
            (depth / pitch_m).round() as usize
        })
        .collect()
}

/// Stacks the layered chest wall on top of the aeration map.
///
/// Each lung column is translated down to the local pleural row, so a curved
/// pleura deforms the flattened map to conform to it.
pub fn assemble_medium(map: &AerationMap, spec: &PhantomSpec, opts: &MediumOptions) -> Result<AssembledMedium> {
    spec.validate()?;
    if (map.pitch_m() - spec.pitch_m).abs() > 1e-9 * spec.pitch_m {
        return Err(Error::IncompatibleDimensions(format!(
            "map pitch {} differs from phantom pitch {}",
            map.pitch_m(),
            spec.pitch_m
        )));
    }
    if opts.layers.bands.is_empty() {
        return Err(Error::InvalidConfig("chest wall needs at least one band".into()));
    }
    let cols = map.cols();
    let pleura_rows = pleura_profile(cols, spec.pitch_m, spec.pleura_depth_m, spec.curvature_per_m);
    if pleura_rows.iter().any(|&r| r == 0) {
        return Err(Error::IncompatibleDimensions("pleura shallower than one pixel".into()));
    }
    let max_row = *pleura_rows.iter().max().expect("cols >= 1");
    let rows = max_row + map.rows() + opts.bottom_rows;
    if rows > 1 << 16 {
        return Err(Error::IncompatibleDimensions(format!("medium of {rows} rows is too deep")));
    }

    let lung = opts.tissues.get(Tissue::Lung);
    let mut rng = rng::seeded(spec.rng_seed, streams::SCATTER);
    let mut rho0 = Grid::new(rows, cols, lung.rho);
    let mut c0 = Grid::new(rows, cols, lung.c);
    let mut beta = Grid::new(rows, cols, lung.beta());
    let mut class = Grid::new(rows, cols, Tissue::Lung as u8);
    let mut air = Grid::new(rows, cols, false);
    let mut chest_wall = Grid::new(rows, cols, false);
    let mut lung_region = Grid::new(rows, cols, false);

    for i in 0..rows {
        for j in 0..cols {
            let pr = pleura_rows[j];
            let tissue = if i < pr {
                chest_wall[(i, j)] = true;
                opts.layers.tissue_at((i as f64 + 0.5) / pr as f64)
            } else {
                Tissue::Lung
            };
            let props = opts.tissues.get(tissue);
            if i >= pr && i < pr + map.rows() {
                lung_region[(i, j)] = true;
                air[(i, j)] = map.is_air(i - pr, j);
            }
            let jitter: f64 = if opts.scatter_std > 0.0 {
                let n: f64 = StandardNormal.sample(&mut rng);
                1.0 + opts.scatter_std * n.clamp(-3.0, 3.0)
            } else {
                1.0
            };
            rho0[(i, j)] = props.rho * if air[(i, j)] { 1.0 } else { jitter };
            c0[(i, j)] = props.c;
            beta[(i, j)] = props.beta();
            class[(i, j)] = tissue as u8;
        }
    }
    let attenuation = Tissue::ALL
        .iter()
        .map(|&t| {
            let p = opts.tissues.get(t);
            PowerLaw { alpha0_db_cm_mhz: p.alpha0_db_cm_mhz, power: p.power }
        })
        .collect();
    let medium = MediumMap { pitch_m: spec.pitch_m, rho0, c0, beta, atten_class: class, air_mask: air, attenuation };
    medium.validate()?;
    Ok(AssembledMedium { medium, chest_wall, lung_region, pleura_rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec_px(diameter_px: f64, wall_px: f64, seed: u64) -> PhantomSpec {
        PhantomSpec {
            target_aeration: 0.5,
            pleura_depth_m: 0.01,
            alveolus_diameter_m: diameter_px * 1e-4,
            alveolus_spread: 0.3,
            wall_thickness_m: wall_px * 1e-4,
            curvature_per_m: 0.0,
            pitch_m: 1e-4,
            rng_seed: seed,
        }
    }

    /// Mean length of air runs along rows, ignoring runs cut by the border.
    fn mean_linear_intercept(map: &AerationMap) -> f64 {
        let g = map.grid();
        let (mut total, mut count) = (0usize, 0usize);
        for i in 0..g.rows() {
            let row = g.row(i);
            let mut j = 0;
            while j < row.len() {
                if row[j] == 1.0 {
                    let start = j;
                    while j < row.len() && row[j] == 1.0 {
                        j += 1;
                    }
                    if start > 0 && j < row.len() {
                        total += j - start;
                        count += 1;
                    }
                } else {
                    j += 1;
                }
            }
        }
        total as f64 / count as f64
    }

    #[test]
    fn texture_has_both_classes() {
        let map = generate_alveolar_texture(&spec_px(8.0, 2.0, 7), 64, 64).unwrap();
        let a = compute_aeration(&map);
        assert!(map.is_binary());
        assert!(a > 0.0 && a < 1.0, "aeration {a}");
    }

    #[test]
    fn texture_is_deterministic() {
        let s = spec_px(8.0, 2.0, 42);
        let a = generate_alveolar_texture(&s, 64, 64).unwrap();
        let _ = generate_alveolar_texture(&spec_px(5.0, 1.0, 3), 40, 40).unwrap();
        let b = generate_alveolar_texture(&s, 64, 64).unwrap();
        assert_eq!(a, b);
        let c = generate_alveolar_texture(&spec_px(8.0, 2.0, 43), 64, 64).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn texture_linear_intercept_matches_diameter() {
        for seed in [1, 2, 3] {
            let map = generate_alveolar_texture(&spec_px(8.0, 2.0, seed), 256, 256).unwrap();
            let lm = mean_linear_intercept(&map);
            assert!((6.4..=9.6).contains(&lm), "seed {seed}: mean linear intercept {lm}");
        }
    }

    #[test]
    fn texture_too_small() {
        let err = generate_alveolar_texture(&spec_px(8.0, 2.0, 1), 12, 64).unwrap_err();
        assert_eq!(err.code(), "phantom-too-small");
        let err = generate_alveolar_texture(&spec_px(30.0, 4.0, 1), 32, 32).unwrap_err();
        assert_eq!(err.code(), "phantom-too-small");
    }

    fn random_map(rows: usize, cols: usize, frac: f64, seed: u64) -> AerationMap {
        let mut rng = rng::seeded(seed, 99);
        AerationMap::new(Grid::from_fn(rows, cols, |_, _| if rng.random::<f64>() < frac { 1.0 } else { 0.0 }), 1e-4)
            .unwrap()
    }

    #[test]
    fn derecruit_reaches_target() {
        let map = generate_alveolar_texture(&spec_px(10.0, 2.0, 5), 100, 100).unwrap();
        let map = derecruit_to_target(&map, 0.6, 1).unwrap();
        assert_eq!(map.air_count(), 6000);
        let out = derecruit_to_target(&map, 0.3, 2).unwrap();
        let a = compute_aeration(&out);
        assert!((0.2999..=0.3001).contains(&a), "{a}");
        // Only air pixels were removed.
        for k in 0..out.grid().len() {
            assert!(out.grid().data()[k] <= map.grid().data()[k]);
        }
    }

    #[test]
    fn derecruit_identity_cases() {
        let map = random_map(20, 30, 0.4, 3);
        let a = compute_aeration(&map);
        assert_eq!(derecruit_to_target(&map, a, 9).unwrap(), map);
        let air = AerationMap::filled(10, 10, 1e-4, 1.0).unwrap();
        assert_eq!(derecruit_to_target(&air, 1.0, 9).unwrap(), air);
    }

    #[test]
    fn derecruit_without_interface_uses_whole_class() {
        let air = AerationMap::filled(10, 10, 1e-4, 1.0).unwrap();
        let out = derecruit_to_target(&air, 0.0, 1).unwrap();
        assert_eq!(out.air_count(), 0);
        let tissue = AerationMap::filled(10, 10, 1e-4, 0.0).unwrap();
        let out = derecruit_to_target(&tissue, 0.37, 1).unwrap();
        assert_eq!(out.air_count(), 37);
    }

    #[test]
    fn recruitment_only_adds_air() {
        let map = random_map(40, 40, 0.3, 8);
        let out = derecruit_to_target(&map, 0.7, 4).unwrap();
        assert_eq!(out.air_count(), target_air_count(0.7, 1600));
        for k in 0..out.grid().len() {
            assert!(out.grid().data()[k] >= map.grid().data()[k]);
        }
    }

    #[test]
    fn first_pass_flips_exact_count() {
        let map = random_map(50, 50, 0.5, 11);
        let current = map.air_count();
        let (_, passes) = derecruit_to_target_traced(&map, 0.45, 3).unwrap();
        let n = current - target_air_count(0.45, 2500);
        assert!(interface_pixels(map.grid(), true).len() >= n);
        assert_eq!(passes.len(), 1);
        assert_eq!(passes[0].flipped.len(), n);
    }

    #[test]
    fn aeration_formulas() {
        let map = AerationMap::new(Grid::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap(), 1e-4).unwrap();
        assert_eq!(compute_aeration(&map), 0.25);
        let ones = AerationMap::filled(5, 7, 1e-4, 1.0).unwrap();
        assert_eq!(compute_aeration(&ones), 1.0);
        assert!(column_aeration(&ones).iter().all(|&v| v == 1.0));

        let map = random_map(50, 50, 0.5, 21);
        let count = map.grid().data().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(compute_aeration(&map), count as f64 / 2500.0);
        let cols = column_aeration(&map);
        let mean = cols.iter().sum::<f64>() / cols.len() as f64;
        assert!((mean - compute_aeration(&map)).abs() < 1e-12);

        let zero_col = AerationMap::from_fn(6, 6, 1e-4, |_, j| j != 2).unwrap();
        assert_eq!(column_aeration(&zero_col)[2], 0.0);
    }

    #[test]
    fn empty_map_is_rejected() {
        assert!(AerationMap::new(Grid::new(0, 4, 0.0), 1e-4).is_err());
        assert!(AerationMap::new(Grid::new(2, 2, 1.5), 1e-4).is_err());
    }

    #[test]
    fn flat_pleura_medium() {
        let mut spec = spec_px(8.0, 2.0, 3);
        spec.pleura_depth_m = 20e-4;
        let map = derecruit_to_target(&generate_alveolar_texture(&spec, 32, 48).unwrap(), 0.4, 3).unwrap();
        let asm = assemble_medium(&map, &spec, &MediumOptions::default()).unwrap();
        assert!(asm.pleura_rows.iter().all(|&r| r == 20));
        let m = &asm.medium;
        assert_eq!(m.rows(), 20 + 32 + 16);
        for i in 0..20 {
            for j in 0..48 {
                assert!(!m.air_mask[(i, j)]);
                assert!(asm.chest_wall[(i, j)]);
            }
        }
        let lung_air = m.air_mask.data().iter().filter(|&&a| a).count();
        let lung_cells = asm.lung_region.data().iter().filter(|&&a| a).count();
        assert_eq!(lung_cells, 32 * 48);
        assert!((lung_air as f64 / lung_cells as f64 - compute_aeration(&map)).abs() < 1e-12);
    }

    #[test]
    fn curved_pleura_keeps_lung_aeration() {
        let mut spec = spec_px(6.0, 2.0, 4);
        spec.pleura_depth_m = 15e-4;
        spec.curvature_per_m = 40.0;
        let map = generate_alveolar_texture(&spec, 24, 64).unwrap();
        let asm = assemble_medium(&map, &spec, &MediumOptions::default()).unwrap();
        let rows = &asm.pleura_rows;
        assert!(rows[0] > rows[32] && rows[63] > rows[32]);
        let air = asm.medium.air_mask.data().iter().filter(|&&a| a).count();
        assert_eq!(air, map.air_count());
        for (j, &pr) in rows.iter().enumerate() {
            assert!(asm.chest_wall[(pr - 1, j)] && !asm.chest_wall[(pr, j)]);
        }
    }

    #[test]
    fn medium_rejects_pitch_mismatch() {
        let spec = spec_px(8.0, 2.0, 3);
        let map = AerationMap::filled(20, 20, 2e-4, 1.0).unwrap();
        let err = assemble_medium(&map, &spec, &MediumOptions::default()).unwrap_err();
        assert_eq!(err.code(), "incompatible-dimensions");
    }
}
