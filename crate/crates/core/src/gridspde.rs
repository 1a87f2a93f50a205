//! Quenched density on the periodic grid.
//!
//! One explicit step of
//! `du = 1/2 sum_ij (nu d_ij + R_ij(0)) d_i d_j u dt - div(u dV)`
//! is taken in Fourier space with the transport term in flux form, so the
//! zero mode (total mass) never changes and a divergence-free increment
//! leaves constants untouched.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::covariance::{effective_diffusivity, CovarianceSpec};
use crate::error::{Error, Result};
use crate::fieldsynth::{Environment, FieldIncrement};
use crate::grid::{Grid, MAX_DIM};
use crate::spectral::{derivative_symbol, NdFft};

/// Nonnegative-in-principle scalar field on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub time: f64,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Config(format!(
                "field has {} values for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values, time })
    }

    pub fn constant(grid: Grid, value: f64, time: f64) -> Self {
        Self { grid, values: vec![value; grid.len()], time }
    }

    /// `sum u dx^d`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn spatial_mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Largest absolute difference to another field on the same grid,
    /// restricted to nodes where `mask` holds.
    pub fn sup_diff_where(&self, other: &Self, mask: impl Fn(usize) -> bool) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .enumerate()
            .filter(|(i, _)| mask(*i))
            .map(|(_, (a, b))| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Annealed Gaussian `G_t`: covariance `(nu I + R(0)) t`.
#[derive(Debug, Clone)]
pub struct GaussianKernel {
    inv: DMatrix<f64>,
    norm: f64,
    dim: usize,
    /// Largest eigenvalue of the covariance, for image truncation.
    spread: f64,
}

impl GaussianKernel {
    pub fn new(spec: &CovarianceSpec, t: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("Gaussian density needs t > 0, got {t}")));
        }
        let cov = effective_diffusivity(spec)? * t;
        let det = cov.determinant();
        let inv = cov
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidSpec("singular effective diffusivity".into()))?;
        let d = spec.dimension;
        let spread = cov.symmetric_eigenvalues().max();
        Ok(Self {
            inv,
            norm: ((2.0 * PI).powi(d as i32) * det).sqrt().recip(),
            dim: d,
            spread,
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += x[i] * self.inv[(i, j)] * x[j];
            }
        }
        self.norm * (-0.5 * q).exp()
    }
}

/// `G_t(x)`.
pub fn gaussian_density(spec: &CovarianceSpec, t: f64, x: &[f64]) -> Result<f64> {
    Ok(GaussianKernel::new(spec, t)?.eval(x))
}

/// `G_t` on the grid at minimal-image coordinates (no periodization).
pub fn gaussian_field(spec: &CovarianceSpec, grid: &Grid, t: f64) -> Result<DensityField> {
    let g = GaussianKernel::new(spec, t)?;
    let values = (0..grid.len()).map(|f| g.eval(&grid.position(f)[..grid.dim])).collect();
    DensityField::new(*grid, values, t)
}

/// Periodization `sum_n G_t(x + n L)` on the grid, the torus analogue of `G_t`.
pub fn periodic_gaussian_field(spec: &CovarianceSpec, grid: &Grid, t: f64) -> Result<DensityField> {
    let g = GaussianKernel::new(spec, t)?;
    let d = grid.dim;
    let l = grid.length;
    // Images beyond 9 standard deviations contribute below e^{-40}.
    let reach = ((9.0 * g.spread.sqrt() + 0.5 * l) / l).ceil() as i64;
    let width = (2 * reach + 1) as usize;
    let combos = width.pow(d as u32);
    let values = (0..grid.len())
        .map(|f| {
            let x = grid.position(f);
            let mut acc = 0.0;
            let mut y = [0.0; MAX_DIM];
            for c in 0..combos {
                let mut rem = c;
                for a in 0..d {
                    let shift = (rem % width) as i64 - reach;
                    rem /= width;
                    y[a] = x[a] + shift as f64 * l;
                }
                acc += g.eval(&y[..d]);
            }
            acc
        })
        .collect();
    DensityField::new(*grid, values, t)
}

/// Default explicit step: `min(dx^2 / (4 d lambda_max), (dx / (4 sigma))^2)`,
/// capped at 90% of the spectral stability bound.
pub fn default_time_step(spec: &CovarianceSpec, grid: &Grid) -> f64 {
    let dx = grid.dx();
    let lam = spec.lambda_max();
    let mut dt = dx * dx / (4.0 * grid.dim as f64 * lam);
    if spec.sigma2 > 0.0 {
        dt = dt.min(dx * dx / (16.0 * spec.sigma2));
    }
    dt.min(0.9 * stability_limit(spec, grid))
}

/// Largest stable step of the explicit scheme: diffusive bound
/// `2 / (lambda_D k_max^2)` and mean-square bound `nu / (lambda_D^2 k_max^2)`
/// with `lambda_D = lambda_max / 2`.
pub fn stability_limit(spec: &CovarianceSpec, grid: &Grid) -> f64 {
    let lam_d = 0.5 * spec.lambda_max();
    let k2 = grid.max_k2();
    let diffusive = 2.0 / (lam_d * k2);
    if spec.sigma2 > 0.0 {
        diffusive.min(spec.nu / (lam_d * lam_d * k2))
    } else {
        diffusive
    }
}

/// Explicit spectral stepper for one `(spec, grid, dt)`.
///
/// The solver holds only scratch state, so one instance can advance any
/// number of fields through the same increment.
#[derive(Debug, Clone)]
pub struct SpdeSolver {
    grid: Grid,
    dt: f64,
    /// `dt * (-1/2 sum_ij D_ij k_i k_j)` per mode.
    heat: Vec<f64>,
    /// `i k_a` per mode and axis (zero on the Nyquist plane of `a`).
    deriv: Vec<[Complex64; MAX_DIM]>,
    fft: NdFft,
    bufs: Vec<Vec<Complex64>>,
    rhs: Vec<Complex64>,
}

impl SpdeSolver {
    pub fn new(spec: &CovarianceSpec, grid: &Grid, dt: f64) -> Result<Self> {
        spec.validate()?;
        grid.check_resolves(spec)?;
        let limit = stability_limit(spec, grid);
        if !(dt > 0.0) || dt > limit {
            return Err(Error::Stability(format!(
                "dt = {dt} exceeds the explicit stability limit {limit:.6} for dx = {}",
                grid.dx()
            )));
        }
        let d = grid.dim;
        let diff = effective_diffusivity(spec)?;
        let n = grid.len();
        let mut heat = Vec::with_capacity(n);
        let mut deriv = Vec::with_capacity(n);
        for flat in 0..n {
            let k = grid.wavevector(flat);
            let idx = grid.multi_index(flat);
            let mut q = 0.0;
            for i in 0..d {
                for j in 0..d {
                    // Mixed terms are odd in each axis and vanish on Nyquist planes.
                    if i != j && (grid.is_nyquist(idx[i]) || grid.is_nyquist(idx[j])) {
                        continue;
                    }
                    q += diff[(i, j)] * k[i] * k[j];
                }
            }
            heat.push(-0.5 * q * dt);
            let mut dv = [Complex64::default(); MAX_DIM];
            for (a, slot) in dv.iter_mut().enumerate().take(d) {
                *slot = derivative_symbol(grid, flat, a);
            }
            deriv.push(dv);
        }
        let nbuf = (d + 2) / 2;
        Ok(Self {
            grid: *grid,
            dt,
            heat,
            deriv,
            fft: NdFft::new(*grid),
            bufs: vec![vec![Complex64::default(); n]; nbuf],
            rhs: vec![Complex64::default(); n],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Advances `u` by one increment.
    pub fn step(&mut self, u: &mut DensityField, inc: &FieldIncrement) -> Result<()> {
        if u.grid != self.grid || inc.grid != self.grid {
            return Err(Error::EnvironmentMismatch("field, increment and solver grids differ".into()));
        }
        if (inc.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::EnvironmentMismatch(format!(
                "increment dt {} vs solver dt {}",
                inc.dt, self.dt
            )));
        }
        let d = self.grid.dim;
        let n = self.grid.len();
        // Real inputs [u, u V_0, ..., u V_{d-1}] packed two per transform.
        let real = |r: usize, i: usize| -> f64 {
            if r == 0 {
                u.values[i]
            } else {
                u.values[i] * inc.component(r - 1)[i]
            }
        };
        for (b, buf) in self.bufs.iter_mut().enumerate() {
            let (r0, r1) = (2 * b, 2 * b + 1);
            for (i, v) in buf.iter_mut().enumerate() {
                let im = if r1 <= d { real(r1, i) } else { 0.0 };
                *v = Complex64::new(real(r0, i), im);
            }
        }
        for buf in self.bufs.iter_mut() {
            self.fft.forward(buf);
        }
        let grid = self.grid;
        let half = Complex64::new(0.5, 0.0);
        let neg_half_i = Complex64::new(0.0, -0.5);
        for k in 0..n {
            let mk = grid.negated(k);
            let mut acc = Complex64::default();
            for r in 0..=d {
                let buf = &self.bufs[r / 2];
                let (x, y) = (buf[k], buf[mk].conj());
                let hat = if r % 2 == 0 { half * (x + y) } else { neg_half_i * (x - y) };
                if r == 0 {
                    acc += hat * self.heat[k];
                } else {
                    acc -= self.deriv[k][r - 1] * hat;
                }
            }
            self.rhs[k] = acc;
        }
        self.fft.inverse(&mut self.rhs);
        let scale = 1.0 / n as f64;
        for (v, r) in u.values.iter_mut().zip(&self.rhs) {
            *v += r.re * scale;
        }
        if u.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("density after t = {}", u.time)));
        }
        u.time += self.dt;
        Ok(())
    }
}

/// Functional form of one step.
pub fn spde_step(u: &DensityField, inc: &FieldIncrement, spec: &CovarianceSpec) -> Result<DensityField> {
    let mut solver = SpdeSolver::new(spec, &u.grid, inc.dt)?;
    let mut out = u.clone();
    solver.step(&mut out, inc)?;
    Ok(out)
}

/// Evolves `u0` (at time `t0`) to `t1` through the environment's increments.
pub fn solve_spde(u0: &DensityField, t0: f64, t1: f64, env: &mut Environment) -> Result<DensityField> {
    if !(t1 > t0) {
        return Err(Error::Config(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    if u0.grid != *env.grid() {
        return Err(Error::EnvironmentMismatch("initial field and environment grids differ".into()));
    }
    let spec = *env.spec();
    let mut solver = SpdeSolver::new(&spec, &u0.grid, env.dt())?;
    let (s0, s1) = (env.slot_of(t0), env.slot_of(t1));
    let mut u = u0.clone();
    u.time = s0 as f64 * env.dt();
    for slot in s0..s1 {
        let inc = env.increment(slot);
        solver.step(&mut u, &inc)?;
    }
    u.time = s1 as f64 * env.dt();
    Ok(u)
}

/// Same as [`solve_spde`] but with half steps, each slot split into two
/// independent increments that sum to the full one.
pub fn solve_spde_refined(u0: &DensityField, t0: f64, t1: f64, env: &mut Environment) -> Result<DensityField> {
    if !(t1 > t0) {
        return Err(Error::Config(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    let spec = *env.spec();
    let mut solver = SpdeSolver::new(&spec, &u0.grid, 0.5 * env.dt())?;
    let (s0, s1) = (env.slot_of(t0), env.slot_of(t1));
    let mut u = u0.clone();
    for slot in s0..s1 {
        let (a, b) = env.half_increments(slot);
        solver.step(&mut u, &a)?;
        solver.step(&mut u, &b)?;
    }
    u.time = s1 as f64 * env.dt();
    Ok(u)
}

/// Gaussian kernel density estimate with its pointwise standard error.
#[derive(Debug, Clone)]
pub struct KdeResult {
    pub density: DensityField,
    pub stderr: Vec<f64>,
}

/// Gaussian-kernel density estimate on the grid; each particle's weights are
/// normalized on the grid so the estimate carries mass exactly 1.
pub fn kde_estimate(positions: &[f64], bandwidth: f64, grid: &Grid) -> Result<DensityField> {
    Ok(kde_with_error(positions, bandwidth, grid)?.density)
}

pub fn kde_with_error(positions: &[f64], bandwidth: f64, grid: &Grid) -> Result<KdeResult> {
    let d = grid.dim;
    if positions.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if bandwidth < 2.0 * grid.dx() * (1.0 - 1e-12) {
        return Err(Error::Config(format!(
            "bandwidth {bandwidth} is below 2 dx = {}",
            2.0 * grid.dx()
        )));
    }
    let count = positions.len() / d;
    let dx = grid.dx();
    let n = grid.n;
    let radius = (6.0 * bandwidth / dx).ceil() as i64;
    let width = (2 * radius + 1) as usize;
    let inv_cell = 1.0 / grid.cell_volume();
    let mut sum = vec![0.0; grid.len()];
    let mut sum2 = vec![0.0; grid.len()];
    let mut w = vec![vec![0.0; width]; d];
    let mut base = [0i64; MAX_DIM];
    for p in positions.chunks_exact(d) {
        for a in 0..d {
            let x = p[a].rem_euclid(grid.length);
            let centre = (x / dx).round() as i64;
            base[a] = centre - radius;
            let mut total = 0.0;
            for (j, wj) in w[a].iter_mut().enumerate() {
                let node = (base[a] + j as i64) as f64 * dx;
                let r = (node - x) / bandwidth;
                *wj = (-0.5 * r * r).exp();
                total += *wj;
            }
            w[a].iter_mut().for_each(|v| *v /= total);
        }
        let combos = width.pow(d as u32);
        for c in 0..combos {
            let mut rem = c;
            let mut weight = inv_cell;
            let mut flat = 0usize;
            for a in 0..d {
                let o = rem % width;
                rem /= width;
                weight *= w[a][o];
                flat = flat * n + (base[a] + o as i64).rem_euclid(n as i64) as usize;
            }
            sum[flat] += weight;
            sum2[flat] += weight * weight;
        }
    }
    let nf = count as f64;
    let values: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let stderr = values
        .iter()
        .zip(&sum2)
        .map(|(m, s2)| ((s2 / nf - m * m).max(0.0) / nf).sqrt())
        .collect();
    Ok(KdeResult { density: DensityField::new(*grid, values, f64::NAN)?, stderr })
}

/// Convolution of a grid field with the Gaussian kernel of standard
/// deviation `bandwidth` (spectral, periodic).
pub fn smooth(u: &DensityField, bandwidth: f64) -> DensityField {
    let grid = u.grid;
    let mut fft = NdFft::new(grid);
    let mut hat = fft.forward_real(&u.values);
    for (flat, h) in hat.iter_mut().enumerate() {
        let k = grid.wavevector(flat);
        let k2: f64 = k[..grid.dim].iter().map(|v| v * v).sum();
        *h *= (-0.5 * bandwidth * bandwidth * k2).exp();
    }
    fft.inverse(&mut hat);
    let scale = 1.0 / grid.len() as f64;
    DensityField {
        grid,
        values: hat.iter().map(|c| c.re * scale).collect(),
        time: u.time,
    }
}
