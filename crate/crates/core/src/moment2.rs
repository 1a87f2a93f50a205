//! Second-moment machinery over the separation variable `z`.
//!
//! `S_t(z)` is the annealed density of the separation `Z = X - Y` of two
//! particles in the same environment, and solves
//! `dS/dt = sum_ij d_i d_j (A22_ij S)` (the quadratic variation of `Z` is
//! `2 A22 dt`). Both discretizations are conservative (`sum S` is invariant).
//! In one dimension `c / A22` is an exact discrete steady state; in higher
//! dimensions the divergence form keeps constants exactly stationary for
//! divergence-free kernels.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{a22_derivative, a22_matrix, a_matrix, CovarianceSpec, Family};
use crate::error::{Error, Result};
use crate::fieldsynth::{Environment, Interpolation};
use crate::flow::ParticleEnsemble;
use crate::grid::{Grid, MAX_DIM};
use crate::stats::{jackknife, mean_se, Estimate};

/// Scalar field over the separation coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub time: f64,
}

impl ZField {
    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()], time: 0.0 }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.position(i)[..grid.dim])).collect();
        Self { grid, values, time: 0.0 }
    }

    pub fn sup_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sum S dz^d`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Node of maximal separation: `L/2` along every axis.
    pub fn far_node(&self) -> usize {
        let half = [self.grid.n / 2; MAX_DIM];
        self.grid.flat_index(&half[..self.grid.dim])
    }
}

/// `sum_ij D_i D_j (a_ij S)` on a periodic grid with node coefficients.
#[derive(Debug, Clone)]
pub struct ConservativeOperator {
    grid: Grid,
    dim: usize,
    /// `coef[node * dim * dim + i * dim + j]`.
    coef: Vec<f64>,
    plus: Vec<Vec<usize>>,
    minus: Vec<Vec<usize>>,
    /// Largest eigenvalue of the coefficient matrix over the grid.
    pub lambda_max: f64,
    work: Vec<f64>,
}

impl ConservativeOperator {
    pub fn new(grid: Grid, dim: usize, coef_at: impl Fn(usize) -> DMatrix<f64>) -> Self {
        let n = grid.len();
        let mut coef = Vec::with_capacity(n * dim * dim);
        let mut lambda_max = 0.0f64;
        for node in 0..n {
            let a = coef_at(node);
            let sym = (&a + a.transpose()) * 0.5;
            lambda_max = lambda_max.max(sym.symmetric_eigenvalues().max());
            for i in 0..dim {
                for j in 0..dim {
                    coef.push(a[(i, j)]);
                }
            }
        }
        let mut plus = Vec::with_capacity(dim);
        let mut minus = Vec::with_capacity(dim);
        for axis in 0..dim {
            let mut sp = [0i64; MAX_DIM];
            sp[axis] = 1;
            let mut sm = [0i64; MAX_DIM];
            sm[axis] = -1;
            plus.push((0..n).map(|f| grid.shifted(f, &sp[..grid.dim])).collect());
            minus.push((0..n).map(|f| grid.shifted(f, &sm[..grid.dim])).collect());
        }
        Self { grid, dim, coef, plus, minus, lambda_max, work: vec![0.0; n] }
    }

    /// Largest stable explicit step with a factor-two margin:
    /// `dz^2 / (4 d lambda_max)`.
    pub fn default_dt(&self) -> f64 {
        let dz = self.grid.dx();
        dz * dz / (4.0 * self.dim as f64 * self.lambda_max)
    }

    /// `out = L s`.
    pub fn apply(&mut self, s: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let h2 = self.grid.dx() * self.grid.dx();
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            for j in 0..d {
                for (node, w) in self.work.iter_mut().enumerate() {
                    *w = self.coef[node * d * d + i * d + j] * s[node];
                }
                let g = &self.work;
                if i == j {
                    let (p, m) = (&self.plus[i], &self.minus[i]);
                    for node in 0..out.len() {
                        out[node] += (g[p[node]] - 2.0 * g[node] + g[m[node]]) / h2;
                    }
                } else {
                    let (pi, mi, pj, mj) = (&self.plus[i], &self.minus[i], &self.plus[j], &self.minus[j]);
                    for node in 0..out.len() {
                        let pp = g[pj[pi[node]]];
                        let pm = g[mj[pi[node]]];
                        let mp = g[pj[mi[node]]];
                        let mm = g[mj[mi[node]]];
                        out[node] += (pp - pm - mp + mm) / (4.0 * h2);
                    }
                }
            }
        }
    }
}

/// `sum_i D_i F_i` with face fluxes `F_i = sum_j a_ij D_j S + b_i S`, where
/// `b_i = sum_j d_j a_ij` is supplied analytically. This is the divergence
/// form of `sum_ij d_i d_j (a_ij S)`; constants are stationary exactly when
/// `b = 0`.
#[derive(Debug, Clone)]
pub struct DivergenceOperator {
    grid: Grid,
    dim: usize,
    /// Per face `(node, axis)`: `d x d` coefficients then `d` drift entries.
    face: Vec<f64>,
    plus: Vec<Vec<usize>>,
    minus: Vec<Vec<usize>>,
    pub lambda_max: f64,
    flux: Vec<Vec<f64>>,
}

impl DivergenceOperator {
    pub fn new(
        grid: Grid,
        coef_at: impl Fn(&[f64]) -> DMatrix<f64>,
        drift_at: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Self {
        let d = grid.dim;
        let n = grid.len();
        let stride = d * d + d;
        let mut face = Vec::with_capacity(n * d * stride);
        let mut lambda_max = 0.0f64;
        for node in 0..n {
            let x = grid.position(node);
            for axis in 0..d {
                let mut z = x;
                z[axis] = grid.wrap_signed(z[axis] + 0.5 * grid.dx());
                let a = coef_at(&z[..d]);
                let sym = (&a + a.transpose()) * 0.5;
                lambda_max = lambda_max.max(sym.symmetric_eigenvalues().max());
                face.extend(a.transpose().iter());
                face.extend(drift_at(&z[..d]));
            }
        }
        let mut plus = Vec::with_capacity(d);
        let mut minus = Vec::with_capacity(d);
        for axis in 0..d {
            let mut sp = [0i64; MAX_DIM];
            sp[axis] = 1;
            let mut sm = [0i64; MAX_DIM];
            sm[axis] = -1;
            plus.push((0..n).map(|f| grid.shifted(f, &sp[..d])).collect());
            minus.push((0..n).map(|f| grid.shifted(f, &sm[..d])).collect());
        }
        Self { grid, dim: d, face, plus, minus, lambda_max, flux: vec![vec![0.0; n]; d] }
    }

    pub fn default_dt(&self) -> f64 {
        let dz = self.grid.dx();
        dz * dz / (4.0 * self.dim as f64 * self.lambda_max)
    }

    pub fn apply(&mut self, s: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let h = self.grid.dx();
        let stride = d * d + d;
        for i in 0..d {
            let pi = &self.plus[i];
            for node in 0..s.len() {
                let f = &self.face[(node * d + i) * stride..(node * d + i + 1) * stride];
                let up = pi[node];
                let mut flux = f[d * d + i] * 0.5 * (s[node] + s[up]);
                for j in 0..d {
                    let grad = if j == i {
                        (s[up] - s[node]) / h
                    } else {
                        let (pj, mj) = (&self.plus[j], &self.minus[j]);
                        (s[pj[node]] - s[mj[node]] + s[pj[up]] - s[mj[up]]) / (4.0 * h)
                    };
                    flux += f[i * d + j] * grad;
                }
                self.flux[i][node] = flux;
            }
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            let mi = &self.minus[i];
            for node in 0..out.len() {
                out[node] += (self.flux[i][node] - self.flux[i][mi[node]]) / h;
            }
        }
    }
}

#[derive(Debug, Clone)]
enum SeparationOperator {
    Product(ConservativeOperator),
    Divergence(DivergenceOperator),
}

impl SeparationOperator {
    fn apply(&mut self, s: &[f64], out: &mut [f64]) {
        match self {
            SeparationOperator::Product(op) => op.apply(s, out),
            SeparationOperator::Divergence(op) => op.apply(s, out),
        }
    }

    fn default_dt(&self) -> f64 {
        match self {
            SeparationOperator::Product(op) => op.default_dt(),
            SeparationOperator::Divergence(op) => op.default_dt(),
        }
    }
}

/// Explicit Euler integrator for the separation equation.
#[derive(Debug, Clone)]
pub struct SmSolver {
    op: SeparationOperator,
    dt: f64,
    rate: Vec<f64>,
}

impl SmSolver {
    /// Solver with the default step.
    pub fn new(spec: &CovarianceSpec, zgrid: &Grid) -> Result<Self> {
        let op = separation_operator(spec, zgrid)?;
        let dt = op.default_dt();
        Ok(Self { rate: vec![0.0; zgrid.len()], op, dt })
    }

    pub fn with_dt(spec: &CovarianceSpec, zgrid: &Grid, dt: f64) -> Result<Self> {
        let mut s = Self::new(spec, zgrid)?;
        let limit = 2.0 * s.dt;
        if !(dt > 0.0) || dt > limit {
            return Err(Error::Stability(format!("dt = {dt} exceeds the explicit limit {limit:.6}")));
        }
        s.dt = dt;
        Ok(s)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&mut self, s: &mut ZField) {
        self.op.apply(&s.values, &mut self.rate);
        for (v, r) in s.values.iter_mut().zip(&self.rate) {
            *v += self.dt * r;
        }
        s.time += self.dt;
    }

    /// Advances `s` to time `t` (rounded to whole steps) and returns it.
    pub fn advance_to(&mut self, s: &mut ZField, t: f64) -> Result<()> {
        let steps = ((t - s.time) / self.dt).round().max(0.0) as u64;
        for _ in 0..steps {
            self.step(s);
        }
        if s.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("second-moment solution".into()));
        }
        Ok(())
    }

    /// Sup norm of the time derivative.
    pub fn rate_norm(&mut self, s: &ZField) -> f64 {
        self.op.apply(&s.values, &mut self.rate);
        self.rate.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Product form `D_zz (a S)` in one dimension, where `c / a` is an exact
/// discrete steady state; divergence form above, where constants stay
/// exactly stationary for divergence-free kernels.
fn separation_operator(spec: &CovarianceSpec, zgrid: &Grid) -> Result<SeparationOperator> {
    spec.validate()?;
    zgrid.check_resolves(spec)?;
    let d = spec.dimension;
    if d == 1 {
        let mut coefs = Vec::with_capacity(zgrid.len());
        for node in 0..zgrid.len() {
            coefs.push(a22_matrix(spec, &zgrid.position(node)[..d])?);
        }
        return Ok(SeparationOperator::Product(ConservativeOperator::new(*zgrid, d, |node| {
            coefs[node].clone()
        })));
    }
    let coef = |z: &[f64]| a22_matrix(spec, z).expect("spec validated");
    let drift = |z: &[f64]| -> Vec<f64> {
        if spec.family == Family::Incompressible {
            return vec![0.0; d];
        }
        (0..d)
            .map(|i| (0..d).map(|j| a22_derivative(spec, z, &[j])[(i, j)]).sum())
            .collect()
    };
    Ok(SeparationOperator::Divergence(DivergenceOperator::new(*zgrid, coef, drift)))
}

/// `S_T` from the constant datum 1, recorded at each of `times` (ascending).
pub fn solve_sm(spec: &CovarianceSpec, zgrid: &Grid, times: &[f64]) -> Result<Vec<ZField>> {
    let mut solver = SmSolver::new(spec, zgrid)?;
    let mut s = ZField::constant(*zgrid, 1.0);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        solver.advance_to(&mut s, t)?;
        out.push(s.clone());
    }
    Ok(out)
}

/// Invariant density: long-time limit of the constant-datum solution,
/// normalized to 1 at maximal separation.
pub fn solve_chi_numeric(spec: &CovarianceSpec, zgrid: &Grid) -> Result<ZField> {
    solve_chi_with(spec, zgrid, 1e-10, 5_000_000)
}

/// As [`solve_chi_numeric`] with explicit tolerance on `sup |dS/dt|` and a
/// step budget.
pub fn solve_chi_with(spec: &CovarianceSpec, zgrid: &Grid, tol: f64, max_steps: u64) -> Result<ZField> {
    let mut solver = SmSolver::new(spec, zgrid)?;
    let mut s = ZField::constant(*zgrid, 1.0);
    if spec.sigma2 == 0.0 || spec.family == Family::Incompressible {
        // The constant is already stationary; one residual check confirms it.
        let r = solver.rate_norm(&s);
        if r > 1e-9 {
            return Err(Error::NonConvergence(format!("constant datum not stationary, rate {r:e}")));
        }
        return Ok(s);
    }
    let check_every = 1000u64;
    let mut steps = 0u64;
    loop {
        for _ in 0..check_every {
            solver.step(&mut s);
        }
        steps += check_every;
        let rate = solver.rate_norm(&s);
        if !rate.is_finite() {
            return Err(Error::NonFinite("invariant density iteration".into()));
        }
        if rate <= tol {
            break;
        }
        if steps >= max_steps {
            return Err(Error::NonConvergence(format!(
                "sup |dS/dt| = {rate:e} after {steps} steps (T = {:.1}), tolerance {tol:e}",
                s.time
            )));
        }
    }
    let far = s.values[s.far_node()];
    s.values.iter_mut().for_each(|v| *v /= far);
    Ok(s)
}

/// Closed-form invariant density sampled on the grid (scalar family).
pub fn chi_closed_field(spec: &CovarianceSpec, zgrid: &Grid) -> Result<ZField> {
    let mut values = Vec::with_capacity(zgrid.len());
    for node in 0..zgrid.len() {
        values.push(crate::covariance::chi_closed_form(spec, &zgrid.position(node)[..zgrid.dim])?);
    }
    Ok(ZField { grid: *zgrid, values, time: f64::INFINITY })
}

/// Sup norm of `tr Hess(A22 chi)` with the product rule expanded:
/// derivatives of `A22` are analytic, derivatives of `chi` are centred
/// second-order differences.
pub fn stationarity_residual(chi: &ZField, spec: &CovarianceSpec) -> Result<f64> {
    spec.validate()?;
    let grid = chi.grid;
    let d = grid.dim;
    if d != spec.dimension {
        return Err(Error::Config("field and spec dimensions differ".into()));
    }
    let h = grid.dx();
    let c = &chi.values;
    let at = |node: usize, shift: &[i64]| c[grid.shifted(node, shift)];
    let mut worst = 0.0f64;
    for node in 0..grid.len() {
        let z = &grid.position(node)[..d];
        let a = a22_matrix(spec, z)?;
        let mut grad = [0.0; MAX_DIM];
        let mut hess = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..d {
            let mut e = [0i64; MAX_DIM];
            e[i] = 1;
            let mut me = [0i64; MAX_DIM];
            me[i] = -1;
            grad[i] = (at(node, &e[..d]) - at(node, &me[..d])) / (2.0 * h);
            hess[i][i] = (at(node, &e[..d]) - 2.0 * c[node] + at(node, &me[..d])) / (h * h);
            for j in 0..i {
                let mut s = [0i64; MAX_DIM];
                let mut acc = 0.0;
                for (si, sj, sign) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                    s[i] = si;
                    s[j] = sj;
                    acc += sign * at(node, &s[..d]);
                }
                hess[i][j] = acc / (4.0 * h * h);
                hess[j][i] = hess[i][j];
            }
        }
        let mut r = 0.0;
        for i in 0..d {
            for j in 0..d {
                let dij = a22_derivative(spec, z, &[i, j])[(i, j)];
                let di = a22_derivative(spec, z, &[i])[(i, j)];
                let dj = a22_derivative(spec, z, &[j])[(i, j)];
                r += dij * c[node] + di * grad[j] + dj * grad[i] + a[(i, j)] * hess[i][j];
            }
        }
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

/// Solver for the full pair density `S(w, z)` in one dimension, on a square
/// grid with axis 0 = centre of mass `w` and axis 1 = separation `z`.
#[derive(Debug, Clone)]
pub struct PairSolver {
    op: ConservativeOperator,
    dt: f64,
    rate: Vec<f64>,
}

impl PairSolver {
    pub fn new(spec: &CovarianceSpec, wz_grid: &Grid) -> Result<Self> {
        spec.validate()?;
        if spec.dimension != 1 || wz_grid.dim != 2 {
            return Err(Error::Config(
                "the full (w, z) solver is only available for d = 1 on a 2-D grid".into(),
            ));
        }
        let zline = Grid::new(1, wz_grid.n, wz_grid.length)?;
        zline.check_resolves(spec)?;
        let mut coefs = Vec::with_capacity(wz_grid.n);
        for j in 0..wz_grid.n {
            coefs.push(a_matrix(spec, &[zline.signed_coord(j)])?);
        }
        let op = ConservativeOperator::new(*wz_grid, 2, |node| coefs[wz_grid.multi_index(node)[1]].clone());
        let dt = op.default_dt();
        Ok(Self { rate: vec![0.0; wz_grid.len()], op, dt })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn advance_to(&mut self, s: &mut ZField, t: f64) -> Result<()> {
        let steps = ((t - s.time) / self.dt).round().max(0.0) as u64;
        for _ in 0..steps {
            self.op.apply(&s.values, &mut self.rate);
            for (v, r) in s.values.iter_mut().zip(&self.rate) {
                *v += self.dt * r;
            }
            s.time += self.dt;
        }
        if s.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pair density".into()));
        }
        Ok(())
    }

    /// `int S dw` as a field over `z`.
    pub fn z_marginal(s: &ZField) -> Result<ZField> {
        let g = s.grid;
        let zline = Grid::new(1, g.n, g.length)?;
        let mut values = vec![0.0; g.n];
        for node in 0..g.len() {
            values[g.multi_index(node)[1]] += s.values[node] * g.dx();
        }
        Ok(ZField { grid: zline, values, time: s.time })
    }
}

/// Minimal constant `C` with `S_t(z) <= C t^{-d/2} exp(-|z - z0|^2 / (C t))`
/// at every node, for each supplied `(t, S_t)`.
pub fn fit_gaussian_envelope(z0: &[f64], snapshots: &[(f64, &ZField)]) -> Result<f64> {
    let violates = |c: f64| snapshots.iter().any(|(t, s)| envelope_excess(z0, *t, s, c) > 0.0);
    let mut hi = 1.0;
    while violates(hi) {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NonConvergence("no Gaussian envelope up to C = 1e12".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if violates(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Largest `S_t - envelope` over the grid (positive means violation).
pub fn envelope_excess(z0: &[f64], t: f64, s: &ZField, c: f64) -> f64 {
    let g = s.grid;
    let d = g.dim;
    let pref = c * t.powf(-0.5 * d as f64);
    (0..g.len())
        .map(|node| {
            let x = g.position(node);
            let r2: f64 = (0..d).map(|a| g.wrap_signed(x[a] - z0[a]).powi(2)).sum();
            s.values[node] - pref * (-r2 / (c * t)).exp()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Settings for the Monte Carlo cross-check of the separation density.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossCheckConfig {
    pub replicas: usize,
    pub pairs_per_replica: usize,
    pub horizon: f64,
    /// Initial separation `Z0 ~ N(z0, s0^2 I)`.
    pub z0: Vec<f64>,
    pub s0: f64,
    /// Histogram bin width along the first axis, in grid cells.
    pub bin_cells: usize,
    pub master_seed: u64,
    pub interpolation: Interpolation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossCheckReport {
    pub bin_centres: Vec<f64>,
    pub mc_mass: Vec<f64>,
    pub mc_se: Vec<f64>,
    pub pde_mass: Vec<f64>,
    /// `|PDE(dz, dt) - PDE(2 dz, 2 dt)|` per bin.
    pub scheme_error: Vec<f64>,
    pub sup_discrepancy: f64,
    /// `max SE + max scheme error`.
    pub combined_error: f64,
    pub mc_variance: Estimate,
    pub pde_variance: f64,
}

impl CrossCheckReport {
    pub fn density_ok(&self) -> bool {
        self.sup_discrepancy <= 3.0 * self.combined_error
    }

    pub fn variance_ok(&self) -> bool {
        self.mc_variance.within(self.pde_variance, 3.0, 0.0)
    }
}

/// Separation law of two particles in a shared environment: Monte Carlo
/// (d = 1) against the separation PDE from the same initial law.
pub fn mc_cross_check(spec: &CovarianceSpec, grid: &Grid, cfg: &CrossCheckConfig) -> Result<CrossCheckReport> {
    if cfg.replicas < 200 {
        return Err(Error::InsufficientReplicas { needed: 200, got: cfg.replicas });
    }
    if spec.dimension != 1 {
        return Err(Error::Config("the separation cross-check runs in d = 1".into()));
    }
    grid.check_resolves(spec)?;
    let l = grid.length;
    let bins = grid.n / cfg.bin_cells;
    let bin_width = l / bins as f64;
    // Bin b covers [-L/2 + b w, -L/2 + (b+1) w).
    let bin_of = |z: f64| -> usize {
        let u = grid.wrap_signed(z) + 0.5 * l;
        ((u / bin_width) as usize).min(bins - 1)
    };
    let dt = crate::gridspde::default_time_step(spec, grid);
    let per_replica: Vec<Vec<f64>> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|replica| -> Result<Vec<f64>> {
            let mut env = Environment::new(spec, grid, dt, cfg.master_seed, replica)?;
            let stream = crate::rng::RngStream::new(cfg.master_seed, replica, crate::rng::Purpose::Initial);
            let mut rng = stream.at(0, 0);
            let mut pos = Vec::with_capacity(2 * cfg.pairs_per_replica);
            for _ in 0..cfg.pairs_per_replica {
                use rand::Rng;
                let w: f64 = rng.random::<f64>() * l;
                let xi: f64 = rng.sample(rand_distr::StandardNormal);
                let z = cfg.z0[0] + cfg.s0 * xi;
                pos.push(w + 0.5 * z);
                pos.push(w - 0.5 * z);
            }
            let mut ens = ParticleEnsemble::new(1, pos, dt, 0, cfg.master_seed, replica, 1, cfg.interpolation)?;
            let end = env.slot_of(cfg.horizon);
            while ens.slot < end {
                let inc = env.increment(ens.slot);
                ens.step(&inc, spec.nu)?;
            }
            // Row: bin fractions, then mean Z^2 (minimal image).
            let mut row = vec![0.0; bins + 1];
            let p = ens.positions();
            let inv = 1.0 / cfg.pairs_per_replica as f64;
            for pair in p.chunks_exact(2) {
                let z = pair[0] - pair[1];
                row[bin_of(z)] += inv;
                row[bins] += grid.wrap_signed(z).powi(2) * inv;
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut mc_mass = Vec::with_capacity(bins);
    let mut mc_se = Vec::with_capacity(bins);
    for b in 0..bins {
        let col: Vec<f64> = per_replica.iter().map(|r| r[b]).collect();
        let e = mean_se(&col);
        mc_mass.push(e.value);
        mc_se.push(e.se);
    }
    let mc_variance = jackknife(&per_replica, |m| m[bins])?;

    let initial = |g: &Grid| -> ZField {
        let norm = 1.0 / (cfg.s0 * (2.0 * std::f64::consts::PI).sqrt());
        ZField::from_fn(*g, |z| {
            (-3..=3)
                .map(|k| {
                    let y = z[0] + k as f64 * l - cfg.z0[0];
                    norm * (-0.5 * y * y / (cfg.s0 * cfg.s0)).exp()
                })
                .sum()
        })
    };
    let bin_masses = |s: &ZField| -> Vec<f64> {
        let g = s.grid;
        let mut m = vec![0.0; bins];
        for node in 0..g.len() {
            // Node-centred cells; a cell straddling a bin edge is split.
            let x = g.signed_coord(node);
            let h = g.dx();
            for (lo, frac) in [(x - 0.5 * h, 0.5), (x, 0.5)] {
                let centre = lo + 0.25 * h;
                m[bin_of(centre)] += frac * s.values[node] * h;
            }
        }
        m
    };
    // PDE on the refined grid (dz / 2 with its own default step); the
    // environment grid gives the coarse solve for the scheme-error estimate.
    let fine_grid = Grid::new(1, 2 * grid.n, l)?;
    let mut coarse = initial(grid);
    let mut coarse_solver = SmSolver::new(spec, grid)?;
    coarse_solver.advance_to(&mut coarse, cfg.horizon)?;
    let mut fine = initial(&fine_grid);
    let mut fine_solver = SmSolver::new(spec, &fine_grid)?;
    fine_solver.advance_to(&mut fine, cfg.horizon)?;
    let pde_mass = bin_masses(&fine);
    let coarse_mass = bin_masses(&coarse);
    let scheme_error: Vec<f64> = pde_mass.iter().zip(&coarse_mass).map(|(a, b)| (a - b).abs()).collect();
    let pde_variance = (0..fine_grid.len())
        .map(|node| fine_grid.signed_coord(node).powi(2) * fine.values[node] * fine_grid.dx())
        .sum();
    let sup_discrepancy = mc_mass
        .iter()
        .zip(&pde_mass)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let combined_error = mc_se.iter().cloned().fold(0.0, f64::max) + scheme_error.iter().cloned().fold(0.0, f64::max);
    let bin_centres = (0..bins).map(|b| -0.5 * l + (b as f64 + 0.5) * bin_width).collect();
    Ok(CrossCheckReport {
        bin_centres,
        mc_mass,
        mc_se,
        pde_mass,
        scheme_error,
        sup_discrepancy,
        combined_error,
        mc_variance,
        pde_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_and_incompressible_keep_constant() {
        let zero = CovarianceSpec { sigma2: 0.0, ..CovarianceSpec::default_scalar() };
        let g = Grid::for_spec(&zero).unwrap();
        let s = solve_sm(&zero, &g, &[5.0]).unwrap();
        assert!(s[0].values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
        let inc = CovarianceSpec::new(2, 1.0, Family::Incompressible, 0.5, 1.0).unwrap();
        let g2 = Grid::new(2, 128, 32.0).unwrap();
        let mut solver = SmSolver::new(&inc, &g2).unwrap();
        let mut f = ZField::constant(g2, 1.0);
        for _ in 0..20 {
            solver.step(&mut f);
        }
        assert!(f.values.iter().all(|&v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn conserves_integral() {
        let spec = CovarianceSpec::default_scalar();
        let g = Grid::for_spec(&spec).unwrap();
        let mut solver = SmSolver::new(&spec, &g).unwrap();
        let mut s = ZField::from_fn(g, |z| (-z[0] * z[0]).exp());
        let before = s.integral();
        solver.advance_to(&mut s, 3.0).unwrap();
        assert!((s.integral() - before).abs() < 1e-12 * before);
    }

    #[test]
    fn discrete_steady_state_in_one_dimension() {
        let spec = CovarianceSpec::default_scalar();
        let g = Grid::for_spec(&spec).unwrap();
        let chi = chi_closed_field(&spec, &g).unwrap();
        let mut solver = SmSolver::new(&spec, &g).unwrap();
        assert!(solver.rate_norm(&chi) < 1e-12);
    }

    #[test]
    fn envelope_fit_is_minimal() {
        let g = Grid::new(1, 128, 32.0).unwrap();
        let s = ZField::from_fn(g, |z| 2.0 * (-z[0] * z[0] / 2.0).exp());
        let c = fit_gaussian_envelope(&[0.0], &[(1.0, &s)]).unwrap();
        assert!(envelope_excess(&[0.0], 1.0, &s, c) <= 0.0);
        assert!(envelope_excess(&[0.0], 1.0, &s, 0.99 * c) > 0.0);
        assert!((c - 2.0).abs() < 1e-9);
    }

    #[test]
    fn pair_solver_rejects_higher_dimensions() {
        let spec = CovarianceSpec::new(2, 1.0, Family::Potential, 0.5, 1.0).unwrap();
        assert!(PairSolver::new(&spec, &Grid::new(2, 128, 32.0).unwrap()).is_err());
    }
}
