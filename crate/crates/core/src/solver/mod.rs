//! 2D staggered-grid FDTD solver for nonlinear acoustics.
//!
//! Pressure lives at cell centres; `vx` at the face to the right of each cell
//! and `vy` at the face below it. The outer faces are rigid walls, which the
//! derivative stencils see through mirrored ghost cells (even for pressure,
//! odd for velocity). Time stepping is second-order leapfrog.

mod fit;
mod relax;

pub use fit::{attenuation_np_per_m, fit_attenuation, model_attenuation, AttenuationFit};
pub use relax::{update_memory, AxisProfile, Mechanism, RelaxParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::phantom::MediumMap;
use relax::{face_average, stack, MemoryOp};

/// Outer boundary treatment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Reflective,
    Absorbing { width: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dx_m: f64,
    pub dt_s: f64,
    pub n_steps: usize,
    pub c_ref: f64,
    pub spatial_order: usize,
    pub n_relax: usize,
    pub boundary: Boundary,
    pub nonlinear: bool,
}

/// Grid points per wavelength at the centre frequency.
pub const POINTS_PER_WAVELENGTH: f64 = 12.0;

impl SolverConfig {
    /// Grid for `f_c` at twelve points per wavelength with step `dt_s`.
    pub fn for_frequency(f_c: f64, dt_s: f64, c_ref: f64) -> Self {
        Self {
            dx_m: c_ref / (f_c * POINTS_PER_WAVELENGTH),
            dt_s,
            n_steps: 0,
            c_ref,
            spatial_order: 4,
            n_relax: 2,
            boundary: Boundary::Absorbing { width: 16 },
            nonlinear: true,
        }
    }

    /// Full-scale defaults: 5.2 MHz, 8 ns step.
    pub fn full_scale() -> Self {
        Self::for_frequency(5.2e6, 8.0e-9, 1540.0)
    }

    pub fn cfl(&self) -> f64 {
        self.c_ref * self.dt_s / self.dx_m
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.dx_m > 0.0 && self.dx_m.is_finite()) || !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return bad("dx and dt must be positive".into());
        }
        if !(self.c_ref > 0.0) {
            return bad("reference sound speed must be positive".into());
        }
        if self.cfl() > 0.5 + 1e-9 {
            return bad(format!("CFL {:.4} exceeds 0.5", self.cfl()));
        }
        if ![2, 4, 6, 8].contains(&self.spatial_order) {
            return bad(format!("spatial order {} not in {{2, 4, 6, 8}}", self.spatial_order));
        }
        if self.n_relax > 3 {
            return bad(format!("n_relax {} exceeds 3", self.n_relax));
        }
        if let Boundary::Absorbing { width } = self.boundary {
            if width != 0 && width < 8 {
                return bad(format!("absorbing layer of {width} cells is thinner than 8"));
            }
        }
        Ok(())
    }

    /// Nyquist-limited frequency the grid was designed for.
    pub fn design_frequency(&self) -> f64 {
        self.c_ref / (POINTS_PER_WAVELENGTH * self.dx_m)
    }
}

/// Absorbing-layer profiles for the configured boundary on a `rows x cols`
/// grid, with no tissue attenuation.
pub fn make_absorbing_boundary(cfg: &SolverConfig, rows: usize, cols: usize) -> RelaxParams {
    match cfg.boundary {
        Boundary::Reflective | Boundary::Absorbing { width: 0 } => RelaxParams::none(),
        Boundary::Absorbing { width } => {
            let f = cfg.design_frequency();
            RelaxParams {
                x: Some(AxisProfile::graded(cols, width, cfg.dx_m, cfg.c_ref, f)),
                y: Some(AxisProfile::graded(rows, width, cfg.dx_m, cfg.c_ref, f)),
                tissue: Vec::new(),
                tissue_speed: Vec::new(),
            }
        }
    }
}

/// Staggered central-difference weights for order `2M`.
pub fn stencil(order: usize) -> &'static [f64] {
    match order {
        2 => &[1.0],
        4 => &[9.0 / 8.0, -1.0 / 24.0],
        6 => &[75.0 / 64.0, -25.0 / 384.0, 3.0 / 640.0],
        8 => &[1225.0 / 1024.0, -245.0 / 3072.0, 49.0 / 5120.0, -5.0 / 7168.0],
        _ => panic!("unsupported spatial order {order}"),
    }
}

/// Additive pressure source: `samples[n]` is added at `cell` on step `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Source {
    pub cell: (usize, usize),
    pub samples: Vec<f64>,
}

/// Snapshot of the wave fields, unpadded.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveState {
    pub p: Grid<f64>,
    pub vx: Grid<f64>,
    pub vy: Grid<f64>,
    pub t_step: usize,
}

/// Solver instance bound to one medium.
pub struct Solver {
    rows: usize,
    cols: usize,
    h: usize,
    w: usize,
    dt: f64,
    inv_dx: f64,
    coeffs: &'static [f64],
    nonlinear: bool,
    // Padded fields, row stride `w`.
    p: Vec<f64>,
    vx: Vec<f64>,
    vy: Vec<f64>,
    // Dense scratch, row stride `cols`.
    gx: Vec<f64>,
    gy: Vec<f64>,
    rho_now: Vec<f64>,
    rho0: Vec<f64>,
    kappa0: Vec<f64>,
    nl_coef: Vec<f64>,
    // dt / rho on faces (linear mode) and dt * rho c^2 on cells.
    vx_coef: Vec<f64>,
    vy_coef: Vec<f64>,
    p_coef: Vec<f64>,
    air: Vec<usize>,
    mem: [MemoryOp; 4],
    t_step: usize,
}

impl Solver {
    pub fn new(medium: &MediumMap, cfg: &SolverConfig, relax: &RelaxParams) -> Result<Self> {
        cfg.validate()?;
        medium.validate()?;
        let (rows, cols) = (medium.rows(), medium.cols());
        if rows < 2 || cols < 2 {
            return Err(Error::IncompatibleDimensions(format!("grid {rows}x{cols} too small")));
        }
        if (medium.pitch_m - cfg.dx_m).abs() > 1e-9 * cfg.dx_m {
            return Err(Error::IncompatibleDimensions(format!(
                "medium pitch {} differs from solver dx {}",
                medium.pitch_m, cfg.dx_m
            )));
        }
        for (axis, prof, n) in [("x", &relax.x, cols), ("y", &relax.y, rows)] {
            if let Some(p) = prof {
                if p.centers.len() != n || p.faces.len() != n {
                    return Err(Error::IncompatibleDimensions(format!("{axis} profile length differs from grid")));
                }
            }
        }
        let n_tissue = relax.n_tissue_mechanisms();
        if relax.tissue.iter().any(|t| t.len() != n_tissue) {
            return Err(Error::InvalidConfig("tissue classes have differing mechanism counts".into()));
        }
        if !relax.tissue.is_empty() && relax.tissue.len() < medium.attenuation.len() {
            return Err(Error::InvalidConfig("relaxation parameters missing for some tissue classes".into()));
        }

        let coeffs = stencil(cfg.spatial_order);
        let h = coeffs.len();
        // Leapfrog stability in 2D: c dt / dx * sqrt(2) * sum |c_m| <= 1.
        let c_max = medium.c0.data().iter().copied().fold(0.0f64, f64::max);
        let courant = c_max * cfg.dt_s / cfg.dx_m * 2f64.sqrt() * coeffs.iter().map(|c| c.abs()).sum::<f64>();
        if courant > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "sound speed {c_max} m/s is unstable at this dx and dt (stability number {courant:.3} > 1)"
            )));
        }
        let w = cols + 2 * h;
        let padded = (rows + 2 * h) * w;
        let n = rows * cols;
        let dt = cfg.dt_s;
        let rho0 = medium.rho0.data().to_vec();
        let kappa0: Vec<f64> = (0..n)
            .map(|k| {
                let c = medium.c0.data()[k] / relax.speed_factor(medium.atten_class.data()[k]);
                1.0 / (rho0[k] * c * c)
            })
            .collect();
        let nl_coef: Vec<f64> = (0..n).map(|k| kappa0[k] * (1.0 - 2.0 * medium.beta.data()[k])).collect();
        let idx = |i: usize, j: usize| i * cols + j;
        let mut vx_coef = vec![0.0; n];
        let mut vy_coef = vec![0.0; n];
        for i in 0..rows {
            for j in 0..cols {
                if j + 1 < cols {
                    vx_coef[idx(i, j)] = 2.0 * dt / (rho0[idx(i, j)] + rho0[idx(i, j + 1)]);
                }
                if i + 1 < rows {
                    vy_coef[idx(i, j)] = 2.0 * dt / (rho0[idx(i, j)] + rho0[idx(i + 1, j)]);
                }
            }
        }
        let p_coef = (0..n).map(|k| dt / kappa0[k]).collect();
        let air = (0..n).filter(|&k| medium.air_mask.data()[k]).collect();

        let has_x = relax.x.is_some() as usize;
        let has_y = relax.y.is_some() as usize;
        let mut mem = [
            MemoryOp::new(has_x + n_tissue),
            MemoryOp::new(has_y + n_tissue),
            MemoryOp::new(has_x + n_tissue),
            MemoryOp::new(has_y + n_tissue),
        ];
        let class = &medium.atten_class;
        for i in 0..rows {
            for j in 0..cols {
                let here = relax.tissue_at(class, i, j);
                if j + 1 < cols {
                    let t = face_average(here, relax.tissue_at(class, i, j + 1));
                    mem[0].push(idx(i, j), &stack(relax.x.as_ref().map(|p| &p.faces[j]), &t), dt);
                }
                if i + 1 < rows {
                    let t = face_average(here, relax.tissue_at(class, i + 1, j));
                    mem[1].push(idx(i, j), &stack(relax.y.as_ref().map(|p| &p.faces[i]), &t), dt);
                }
                mem[2].push(idx(i, j), &stack(relax.x.as_ref().map(|p| &p.centers[j]), here), dt);
                mem[3].push(idx(i, j), &stack(relax.y.as_ref().map(|p| &p.centers[i]), here), dt);
            }
        }

        Ok(Self {
            rows,
            cols,
            h,
            w,
            dt,
            inv_dx: 1.0 / cfg.dx_m,
            coeffs,
            nonlinear: cfg.nonlinear,
            p: vec![0.0; padded],
            vx: vec![0.0; padded],
            vy: vec![0.0; padded],
            gx: vec![0.0; n],
            gy: vec![0.0; n],
            rho_now: vec![0.0; n],
            rho0,
            kappa0,
            nl_coef,
            vx_coef,
            vy_coef,
            p_coef,
            air,
            mem,
            t_step: 0,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn t_step(&self) -> usize {
        self.t_step
    }

    /// Number of stored memory-variable locations per operator
    /// (`[grad_1 x, grad_1 y, grad_2 x, grad_2 y]`).
    pub fn memory_locations(&self) -> [usize; 4] {
        [self.mem[0].len(), self.mem[1].len(), self.mem[2].len(), self.mem[3].len()]
    }

    #[inline]
    fn pad(&self, i: usize, j: usize) -> usize {
        (i + self.h) * self.w + j + self.h
    }

    pub fn pressure_at(&self, i: usize, j: usize) -> f64 {
        self.p[self.pad(i, j)]
    }

    pub fn state(&self) -> WaveState {
        let take = |f: &[f64]| Grid::from_fn(self.rows, self.cols, |i, j| f[self.pad(i, j)]);
        WaveState { p: take(&self.p), vx: take(&self.vx), vy: take(&self.vy), t_step: self.t_step }
    }

    /// Loads fields from a snapshot. Memory variables are reset.
    pub fn set_state(&mut self, state: &WaveState) -> Result<()> {
        if state.p.rows() != self.rows || state.p.cols() != self.cols {
            return Err(Error::IncompatibleDimensions("state does not match the grid".into()));
        }
        self.p.iter_mut().for_each(|v| *v = 0.0);
        self.vx.iter_mut().for_each(|v| *v = 0.0);
        self.vy.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let k = self.pad(i, j);
                self.p[k] = state.p[(i, j)];
                self.vx[k] = if j + 1 < self.cols { state.vx[(i, j)] } else { 0.0 };
                self.vy[k] = if i + 1 < self.rows { state.vy[(i, j)] } else { 0.0 };
            }
        }
        for &k in &self.air {
            let (i, j) = (k / self.cols, k % self.cols);
            let kp = self.pad(i, j);
            self.p[kp] = 0.0;
        }
        self.mem.iter_mut().for_each(MemoryOp::reset);
        self.t_step = state.t_step;
        Ok(())
    }

    fn fill_pressure_ghosts(&mut self) {
        let (h, w, rows, cols) = (self.h, self.w, self.rows, self.cols);
        for i in 0..rows {
            let r = (i + h) * w;
            for q in 0..h {
                self.p[r + h - 1 - q] = self.p[r + h + q];
                self.p[r + h + cols + q] = self.p[r + h + cols - 1 - q];
            }
        }
        for q in 0..h {
            let (dst_top, src_top) = ((h - 1 - q) * w, (h + q) * w);
            let (dst_bot, src_bot) = ((h + rows + q) * w, (h + rows - 1 - q) * w);
            self.p.copy_within(src_top + h..src_top + h + cols, dst_top + h);
            self.p.copy_within(src_bot + h..src_bot + h + cols, dst_bot + h);
        }
    }

    fn fill_velocity_ghosts(&mut self) {
        let (h, w, rows, cols) = (self.h, self.w, self.rows, self.cols);
        // vx: wall faces at stored -1 and cols-1, odd mirror about each.
        for i in 0..rows {
            let r = (i + h) * w + h;
            self.vx[r + cols - 1] = 0.0;
            self.vx[r - 1] = 0.0;
            for k in 1..h {
                self.vx[r - 1 - k] = -self.vx[r - 1 + k];
            }
            for k in 1..h {
                self.vx[r + cols - 1 + k] = -self.vx[r + cols - 1 - k];
            }
        }
        let at = |i: isize, j: usize| ((i + h as isize) as usize) * w + h + j;
        for j in 0..cols {
            self.vy[at(rows as isize - 1, j)] = 0.0;
            self.vy[at(-1, j)] = 0.0;
            for k in 1..h as isize {
                self.vy[at(-1 - k, j)] = -self.vy[at(-1 + k, j)];
                self.vy[at(rows as isize - 1 + k, j)] = -self.vy[at(rows as isize - 1 - k, j)];
            }
        }
    }

    /// Advances one time step. `sources` contribute their sample for the
    /// current step index (sources shorter than that are silent).
    pub fn step(&mut self, sources: &[Source]) -> Result<()> {
        let (h, w, rows, cols) = (self.h, self.w, self.rows, self.cols);
        let c = self.coeffs;
        let inv_dx = self.inv_dx;

        // Velocities from the pressure gradient.
        self.fill_pressure_ghosts();
        for i in 0..rows {
            let r = (i + h) * w + h;
            let out = &mut self.gx[i * cols..(i + 1) * cols - 1];
            out.fill(0.0);
            for (m, &cm) in c.iter().enumerate() {
                let ahead = &self.p[r + m + 1..r + m + cols];
                let behind = &self.p[r - m..r - m + cols - 1];
                for ((g, a), b) in out.iter_mut().zip(ahead).zip(behind) {
                    *g += cm * (a - b);
                }
            }
            out.iter_mut().for_each(|v| *v *= inv_dx);
            self.gx[(i + 1) * cols - 1] = 0.0;
        }
        for i in 0..rows - 1 {
            let out = &mut self.gy[i * cols..(i + 1) * cols];
            out.fill(0.0);
            for (m, &cm) in c.iter().enumerate() {
                let up = (i + h + m + 1) * w + h;
                let dn = (i + h - m) * w + h;
                let (a, b) = (&self.p[up..up + cols], &self.p[dn..dn + cols]);
                for ((g, a), b) in out.iter_mut().zip(a).zip(b) {
                    *g += cm * (a - b);
                }
            }
            out.iter_mut().for_each(|v| *v *= inv_dx);
        }
        self.gy[(rows - 1) * cols..].fill(0.0);
        self.mem[0].apply(&mut self.gx);
        self.mem[1].apply(&mut self.gy);
        if self.nonlinear {
            // Density follows the lagged pressure: rho = rho0 (1 + kappa0 p).
            for i in 0..rows {
                let r = (i + h) * w + h;
                let k0 = i * cols;
                let p = &self.p[r..r + cols];
                let (rho0, kap) = (&self.rho0[k0..k0 + cols], &self.kappa0[k0..k0 + cols]);
                for (j, out) in self.rho_now[k0..k0 + cols].iter_mut().enumerate() {
                    *out = rho0[j] * (1.0 + kap[j] * p[j]);
                }
            }
            let dt2 = 2.0 * self.dt;
            for i in 0..rows {
                let r = (i + h) * w + h;
                let k0 = i * cols;
                let rc = &self.rho_now[k0..k0 + cols];
                let vx = &mut self.vx[r..r + cols - 1];
                let gx = &self.gx[k0..k0 + cols - 1];
                for j in 0..cols - 1 {
                    vx[j] -= dt2 / (rc[j] + rc[j + 1]) * gx[j];
                }
                if i + 1 < rows {
                    let rs = &self.rho_now[k0 + cols..k0 + 2 * cols];
                    let vy = &mut self.vy[r..r + cols];
                    let gy = &self.gy[k0..k0 + cols];
                    for j in 0..cols {
                        vy[j] -= dt2 / (rc[j] + rs[j]) * gy[j];
                    }
                }
            }
        } else {
            for i in 0..rows {
                let r = (i + h) * w + h;
                let k0 = i * cols;
                let (vx, vy) = (&mut self.vx[r..r + cols], &mut self.vy[r..r + cols]);
                let (cx, cy) = (&self.vx_coef[k0..k0 + cols], &self.vy_coef[k0..k0 + cols]);
                let (gx, gy) = (&self.gx[k0..k0 + cols], &self.gy[k0..k0 + cols]);
                for j in 0..cols {
                    vx[j] -= cx[j] * gx[j];
                }
                for j in 0..cols {
                    vy[j] -= cy[j] * gy[j];
                }
            }
        }

        // Pressure from the velocity divergence.
        self.fill_velocity_ghosts();
        for i in 0..rows {
            let r = (i + h) * w + h;
            let out = &mut self.gx[i * cols..(i + 1) * cols];
            out.fill(0.0);
            for (m, &cm) in c.iter().enumerate() {
                let ahead = &self.vx[r + m..r + m + cols];
                let behind = &self.vx[r - m - 1..r - m - 1 + cols];
                for ((g, a), b) in out.iter_mut().zip(ahead).zip(behind) {
                    *g += cm * (a - b);
                }
            }
            out.iter_mut().for_each(|v| *v *= inv_dx);
        }
        for i in 0..rows {
            let out = &mut self.gy[i * cols..(i + 1) * cols];
            out.fill(0.0);
            for (m, &cm) in c.iter().enumerate() {
                let up = (i + h + m) * w + h;
                let dn = (i + h - m - 1) * w + h;
                let (a, b) = (&self.vy[up..up + cols], &self.vy[dn..dn + cols]);
                for ((g, a), b) in out.iter_mut().zip(a).zip(b) {
                    *g += cm * (a - b);
                }
            }
            out.iter_mut().for_each(|v| *v *= inv_dx);
        }
        self.mem[2].apply(&mut self.gx);
        self.mem[3].apply(&mut self.gy);
        for i in 0..rows {
            let r = (i + h) * w + h;
            let k0 = i * cols;
            let p = &mut self.p[r..r + cols];
            let (gx, gy) = (&self.gx[k0..k0 + cols], &self.gy[k0..k0 + cols]);
            if self.nonlinear {
                let (kap, nl) = (&self.kappa0[k0..k0 + cols], &self.nl_coef[k0..k0 + cols]);
                for j in 0..cols {
                    p[j] -= self.dt / (kap[j] * (1.0 + nl[j] * p[j])) * (gx[j] + gy[j]);
                }
            } else {
                let pc = &self.p_coef[k0..k0 + cols];
                for j in 0..cols {
                    p[j] -= pc[j] * (gx[j] + gy[j]);
                }
            }
        }

        let n = self.t_step;
        for s in sources {
            if let Some(&v) = s.samples.get(n) {
                let k = self.pad(s.cell.0, s.cell.1);
                self.p[k] += v;
            }
        }
        for &k in &self.air {
            let idx = (k / cols + h) * w + k % cols + h;
            self.p[idx] = 0.0;
        }
        self.t_step += 1;
        let mut sum = 0.0;
        for i in 0..rows {
            let r = (i + h) * w + h;
            sum += self.p[r..r + cols].iter().map(|v| v.abs()).sum::<f64>();
        }
        if !sum.is_finite() {
            return Err(Error::SolverDiverged { step: n });
        }
        Ok(())
    }

    /// Runs `n_steps` steps and returns the pressure recorded at each
    /// receiver after every step (`traces[r][n]`).
    pub fn run(&mut self, sources: &[Source], receivers: &[(usize, usize)], n_steps: usize) -> Result<Vec<Vec<f64>>> {
        self.check_cells(sources.iter().map(|s| s.cell))?;
        self.check_cells(receivers.iter().copied())?;
        let mut traces = vec![Vec::with_capacity(n_steps); receivers.len()];
        let ridx: Vec<usize> = receivers.iter().map(|&(i, j)| self.pad(i, j)).collect();
        for _ in 0..n_steps {
            self.step(sources)?;
            for (t, &k) in traces.iter_mut().zip(&ridx) {
                t.push(self.p[k]);
            }
        }
        Ok(traces)
    }

    fn check_cells(&self, cells: impl Iterator<Item = (usize, usize)>) -> Result<()> {
        for (i, j) in cells {
            if i >= self.rows || j >= self.cols {
                return Err(Error::InvalidInput(format!("cell ({i}, {j}) outside {}x{} grid", self.rows, self.cols)));
            }
            if self.air.binary_search(&(i * self.cols + j)).is_ok() {
                return Err(Error::InvalidInput(format!("cell ({i}, {j}) is air")));
            }
        }
        Ok(())
    }

    /// Pressure field (unpadded, row-major).
    pub fn pressure(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            let r = (i + self.h) * self.w + self.h;
            out.extend_from_slice(&self.p[r..r + self.cols]);
        }
        out
    }

    /// Discrete energy conserved by the lossless linear scheme:
    /// `1/2 sum rho v^2 + 1/2 sum kappa0 p_prev p` times the cell area, where
    /// `p_prev` is the pressure before the last step.
    pub fn staggered_energy(&self, p_prev: &[f64]) -> f64 {
        let (h, w, rows, cols) = (self.h, self.w, self.rows, self.cols);
        let dx2 = 1.0 / (self.inv_dx * self.inv_dx);
        let mut e = 0.0;
        for i in 0..rows {
            let r = (i + h) * w + h;
            for j in 0..cols {
                let k = i * cols + j;
                if j + 1 < cols {
                    let rho = 0.5 * (self.rho0[k] + self.rho0[k + 1]);
                    e += 0.5 * rho * self.vx[r + j].powi(2);
                }
                if i + 1 < rows {
                    let rho = 0.5 * (self.rho0[k] + self.rho0[k + cols]);
                    e += 0.5 * rho * self.vy[r + j].powi(2);
                }
                e += 0.5 * self.kappa0[k] * p_prev[k] * self.p[r + j];
            }
        }
        e * dx2
    }

    /// Textbook energy `sum (kappa0 p^2 / 2 + rho |v|^2 / 2) dx^2` of the
    /// current fields (velocities half a step behind pressure).
    pub fn naive_energy(&self) -> f64 {
        let (h, w, rows, cols) = (self.h, self.w, self.rows, self.cols);
        let dx2 = 1.0 / (self.inv_dx * self.inv_dx);
        let mut e = 0.0;
        for i in 0..rows {
            let r = (i + h) * w + h;
            for j in 0..cols {
                let k = i * cols + j;
                e += 0.5 * self.kappa0[k] * self.p[r + j].powi(2)
                    + 0.5 * self.rho0[k] * (self.vx[r + j].powi(2) + self.vy[r + j].powi(2));
            }
        }
        e * dx2
    }
}

/// Builds the relaxation parameters for `medium`: absorbing layers from the
/// boundary config plus fitted attenuation per tissue class over `band`.
pub fn relax_for_medium(medium: &MediumMap, cfg: &SolverConfig, band: (f64, f64)) -> Result<RelaxParams> {
    let base = make_absorbing_boundary(cfg, medium.rows(), medium.cols());
    if cfg.n_relax == 0 || medium.is_lossless() {
        return Ok(base);
    }
    let mut mechanisms = Vec::with_capacity(medium.attenuation.len());
    let mut speed = Vec::with_capacity(medium.attenuation.len());
    for (class, law) in medium.attenuation.iter().enumerate() {
        // Sound speed of the class, taken from any cell that carries it.
        let c = medium
            .atten_class
            .data()
            .iter()
            .position(|&k| k as usize == class)
            .map_or(cfg.c_ref, |k| medium.c0.data()[k]);
        let fit = fit_attenuation(law.alpha0_db_cm_mhz, law.power, band, cfg.n_relax, c, cfg.dt_s)?;
        mechanisms.push(fit.mechanisms);
        speed.push(fit.speed_factor);
    }
    Ok(base.with_tissue(mechanisms, speed))
}
