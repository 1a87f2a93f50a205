//! The stationary corrector `U`: long-time limit of solutions started from
//! the constant 1, and its one-time and two-time correlations.
//!
//! On the periodic box the spatial mean of every such solution is exactly 1
//! (mass conservation), so the raw product average `mean_x U(x) U(x + z)` has
//! mean exactly 1 over `z` and is a torus-normalized version of `chi`. The
//! estimators therefore divide by the same average at the far separation
//! `L/2`, which is the surrogate for `chi = 1` at infinity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceSpec;
use crate::error::{Error, Result};
use crate::fieldsynth::Environment;
use crate::grid::{Grid, MAX_DIM};
use crate::gridspde::{default_time_step, DensityField, SpdeSolver};
use crate::stats::{jackknife, Estimate};

/// Minimum replica count for correlation estimators.
pub const MIN_REPLICAS: usize = 50;

/// One replica's estimate of `U(t, .)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectorEstimate {
    pub field: DensityField,
    pub burn_in: f64,
    pub replica: u64,
}

/// `U(t, .)` and `U(t + tau, .)` for a list of lags from one replica.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectorSample {
    pub replica: u64,
    pub burn_in: f64,
    pub lags: Vec<f64>,
    /// `snapshots[k]` is the field at `t + lags[k]`.
    pub snapshots: Vec<DensityField>,
}

impl CorrectorSample {
    /// The equal-time estimate, at the first lag.
    pub fn estimate(&self) -> CorrectorEstimate {
        CorrectorEstimate { field: self.snapshots[0].clone(), burn_in: self.burn_in, replica: self.replica }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorConfig {
    pub burn_in: f64,
    /// Observation time `t`.
    pub time: f64,
    /// Nondecreasing lags, the first usually 0.
    pub lags: Vec<f64>,
    pub dt: f64,
}

impl CorrectorConfig {
    pub fn new(spec: &CovarianceSpec, grid: &Grid) -> Self {
        Self { burn_in: default_burn_in(spec, grid), time: 0.0, lags: vec![0.0], dt: default_time_step(spec, grid) }
    }

    /// `{0, 1, 2, 4, 8} l^2 / nu`.
    pub fn standard_lags(spec: &CovarianceSpec) -> Vec<f64> {
        let unit = spec.corr_length * spec.corr_length / spec.nu;
        [0.0, 1.0, 2.0, 4.0, 8.0].iter().map(|m| m * unit).collect()
    }

    fn validate(&self, spec: &CovarianceSpec) -> Result<()> {
        if !(self.burn_in > 0.0) || !(self.dt > 0.0) {
            return Err(Error::Config("burn-in and dt must be positive".into()));
        }
        if self.lags.is_empty() || self.lags.windows(2).any(|w| w[1] < w[0]) || self.lags[0] < 0.0 {
            return Err(Error::Config("lags must be a nonempty nondecreasing list of nonnegative times".into()));
        }
        let mixing = spec.corr_length * spec.corr_length / spec.nu;
        if self.burn_in < 10.0 * mixing {
            log::warn!("burn-in {} is below 10 mixing times ({})", self.burn_in, 10.0 * mixing);
        }
        Ok(())
    }
}

/// Burn-in long enough for the slowest mode of the box to relax: eight
/// relaxation times `L^2 / (4 pi^2 nu)`, and never below `10 l^2 / nu`.
pub fn default_burn_in(spec: &CovarianceSpec, grid: &Grid) -> f64 {
    let relax = grid.length * grid.length / (4.0 * std::f64::consts::PI.powi(2) * spec.nu);
    (8.0 * relax).max(10.0 * spec.corr_length * spec.corr_length / spec.nu)
}

/// Starts from `u = 1` at `t - M` and solves up to `t` in replica `replica`'s
/// environment.
pub fn run_from_constant(
    spec: &CovarianceSpec,
    grid: &Grid,
    burn_in: f64,
    t: f64,
    seed: u64,
    replica: u64,
) -> Result<CorrectorEstimate> {
    let cfg = CorrectorConfig { burn_in, time: t, lags: vec![0.0], dt: default_time_step(spec, grid) };
    Ok(run_corrector_path(spec, grid, &cfg, seed, replica)?.estimate())
}

/// One replica through `t + max(lags)`, recording the snapshots.
pub fn run_corrector_path(
    spec: &CovarianceSpec,
    grid: &Grid,
    cfg: &CorrectorConfig,
    seed: u64,
    replica: u64,
) -> Result<CorrectorSample> {
    cfg.validate(spec)?;
    run_path(spec, grid, cfg, seed, replica)
}

fn run_path(
    spec: &CovarianceSpec,
    grid: &Grid,
    cfg: &CorrectorConfig,
    seed: u64,
    replica: u64,
) -> Result<CorrectorSample> {
    let mut env = Environment::new(spec, grid, cfg.dt, seed, replica)?;
    let mut solver = SpdeSolver::new(spec, grid, cfg.dt)?;
    let start = env.slot_of(cfg.time - cfg.burn_in);
    let stops: Vec<i64> = cfg.lags.iter().map(|tau| env.slot_of(cfg.time + tau)).collect();
    let mut u = DensityField::constant(*grid, 1.0, start as f64 * cfg.dt);
    let mut snapshots = Vec::with_capacity(stops.len());
    let mut slot = start;
    for &stop in &stops {
        while slot < stop {
            let inc = env.increment(slot);
            solver.step(&mut u, &inc)?;
            slot += 1;
        }
        u.time = slot as f64 * cfg.dt;
        snapshots.push(u.clone());
    }
    Ok(CorrectorSample { replica, burn_in: cfg.burn_in, lags: cfg.lags.clone(), snapshots })
}

/// Replicas `0..replicas` in parallel, ordered by replica.
pub fn sample_correctors(
    spec: &CovarianceSpec,
    grid: &Grid,
    cfg: &CorrectorConfig,
    seed: u64,
    replicas: usize,
) -> Result<Vec<CorrectorSample>> {
    cfg.validate(spec)?;
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| run_path(spec, grid, cfg, seed, r))
        .collect()
}

/// Grid shift for a separation vector; it must lie on the lattice.
fn lattice_shift(grid: &Grid, z: &[f64]) -> Result<[i64; MAX_DIM]> {
    if z.len() != grid.dim {
        return Err(Error::Config(format!("separation has {} components, grid has {}", z.len(), grid.dim)));
    }
    let mut shift = [0i64; MAX_DIM];
    for (s, &c) in shift.iter_mut().zip(z) {
        let steps = c / grid.dx();
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::Config(format!("separation component {c} is not a multiple of dx = {}", grid.dx())));
        }
        *s = steps.round() as i64;
    }
    Ok(shift)
}

fn far_shift(grid: &Grid) -> [i64; MAX_DIM] {
    [(grid.n / 2) as i64; MAX_DIM]
}

fn product_mean(a: &DensityField, b: &DensityField, shift: &[i64], nodes: &[usize]) -> f64 {
    let grid = &a.grid;
    nodes.iter().map(|&x| a.values[x] * b.values[grid.shifted(x, shift)]).sum::<f64>() / nodes.len() as f64
}

fn check_ensemble<'a>(fields: impl Iterator<Item = &'a DensityField>, count: usize) -> Result<Grid> {
    if count < MIN_REPLICAS {
        return Err(Error::InsufficientReplicas { needed: MIN_REPLICAS, got: count });
    }
    let mut grid = None;
    for f in fields {
        match grid {
            None => grid = Some(f.grid),
            Some(g) if g != f.grid => {
                return Err(Error::EnvironmentMismatch("corrector estimates on different grids".into()))
            }
            _ => {}
        }
    }
    grid.ok_or(Error::EmptyEnsemble)
}

/// Estimate of `chi(z)` from the spatially averaged product over all nodes.
pub fn two_point_correlation(estimates: &[CorrectorEstimate], z: &[f64]) -> Result<Estimate> {
    let grid = check_ensemble(estimates.iter().map(|e| &e.field), estimates.len())?;
    let nodes: Vec<usize> = (0..grid.len()).collect();
    two_point_correlation_over(estimates, z, &nodes)
}

/// Same estimator restricted to base points `nodes`.
pub fn two_point_correlation_over(estimates: &[CorrectorEstimate], z: &[f64], nodes: &[usize]) -> Result<Estimate> {
    let grid = check_ensemble(estimates.iter().map(|e| &e.field), estimates.len())?;
    if estimates.windows(2).any(|w| w[0].burn_in != w[1].burn_in || w[0].field.time != w[1].field.time) {
        return Err(Error::EnvironmentMismatch("corrector estimates differ in burn-in or time".into()));
    }
    if nodes.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let shift = lattice_shift(&grid, z)?;
    let far = far_shift(&grid);
    let d = grid.dim;
    let groups: Vec<Vec<f64>> = estimates
        .iter()
        .map(|e| {
            vec![
                product_mean(&e.field, &e.field, &shift[..d], nodes),
                product_mean(&e.field, &e.field, &far[..d], nodes),
            ]
        })
        .collect();
    jackknife(&groups, |m| m[0] / m[1])
}

/// Estimate of `E (U(t, x) - 1)(U(t + tau, x) - 1)` at lag `lags[lag_index]`.
pub fn time_correlation(samples: &[CorrectorSample], lag_index: usize) -> Result<Estimate> {
    let groups = time_groups(samples, &[lag_index])?;
    jackknife(&groups, |m| m[0] / m[1] - 1.0)
}

/// Paired estimate of `corr(lags[a]) - corr(lags[b])` from the same replicas.
pub fn time_correlation_contrast(samples: &[CorrectorSample], a: usize, b: usize) -> Result<Estimate> {
    let groups = time_groups(samples, &[a, b])?;
    jackknife(&groups, |m| (m[0] - m[1]) / m[2])
}

/// Per replica: the lagged products for `lag_indices`, then the
/// equal-time far-separation product.
fn time_groups(samples: &[CorrectorSample], lag_indices: &[usize]) -> Result<Vec<Vec<f64>>> {
    let grid = check_ensemble(samples.iter().flat_map(|s| s.snapshots.iter()), samples.len())?;
    if samples.iter().any(|s| lag_indices.iter().any(|&k| k >= s.snapshots.len())) {
        return Err(Error::Config(format!("lag indices {lag_indices:?} out of range")));
    }
    if samples.windows(2).any(|w| w[0].lags != w[1].lags) {
        return Err(Error::EnvironmentMismatch("corrector samples use different lag lists".into()));
    }
    let nodes: Vec<usize> = (0..grid.len()).collect();
    let zero = [0i64; MAX_DIM];
    let far = far_shift(&grid);
    let d = grid.dim;
    Ok(samples
        .iter()
        .map(|s| {
            let u0 = &s.snapshots[0];
            let mut row: Vec<f64> =
                lag_indices.iter().map(|&k| product_mean(u0, &s.snapshots[k], &zero[..d], &nodes)).collect();
            row.push(product_mean(u0, u0, &far[..d], &nodes));
            row
        })
        .collect())
}

/// One row of a correlation table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub coordinate: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub reference: Option<f64>,
}

/// `E |u^[M_k] - u^[M_{k+1}]|^2` at time `t`, averaged over the box, for an
/// increasing list of burn-ins. All runs of a replica share increments on
/// their common interval.
pub fn cauchy_gaps(
    spec: &CovarianceSpec,
    grid: &Grid,
    dt: f64,
    t: f64,
    burn_ins: &[f64],
    seed: u64,
    replicas: usize,
) -> Result<Vec<Estimate>> {
    if burn_ins.len() < 2 || burn_ins.windows(2).any(|w| w[1] <= w[0]) || burn_ins[0] <= 0.0 {
        return Err(Error::Config("need at least two increasing positive burn-ins".into()));
    }
    if replicas < 2 {
        return Err(Error::InsufficientReplicas { needed: 2, got: replicas });
    }
    let per_replica: Vec<Vec<f64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut env = Environment::new(spec, grid, dt, seed, r)?;
            let mut solver = SpdeSolver::new(spec, grid, dt)?;
            let starts: Vec<i64> = burn_ins.iter().map(|m| env.slot_of(t - m)).collect();
            let end = env.slot_of(t);
            let first = *starts.iter().min().expect("nonempty");
            let mut fields: Vec<DensityField> =
                starts.iter().map(|&s| DensityField::constant(*grid, 1.0, s as f64 * dt)).collect();
            for slot in first..end {
                let inc = env.increment(slot);
                for (u, &s) in fields.iter_mut().zip(&starts) {
                    if slot >= s {
                        solver.step(u, &inc)?;
                    }
                }
            }
            Ok(fields
                .windows(2)
                .map(|w| {
                    w[0].values.iter().zip(&w[1].values).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                        / grid.len() as f64
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let k = burn_ins.len() - 1;
    Ok((0..k)
        .map(|i| crate::stats::mean_se(&per_replica.iter().map(|row| row[i]).collect::<Vec<_>>()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::Family;

    fn small(family: Family, dim: usize, sigma2: f64) -> (CovarianceSpec, Grid) {
        let spec = CovarianceSpec::new(dim, 1.0, family, sigma2, 0.5).unwrap();
        (spec, Grid::new(dim, 128, 16.0).unwrap())
    }

    #[test]
    fn zero_amplitude_stays_constant() {
        let (spec, grid) = small(Family::IsotropicScalar, 1, 0.0);
        let est = run_from_constant(&spec, &grid, 5.0, 0.0, 3, 0).unwrap();
        assert!(est.field.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn incompressible_stays_constant() {
        let (spec, grid) = small(Family::Incompressible, 2, 0.5);
        let est = run_from_constant(&spec, &grid, 0.2, 1.0, 3, 1).unwrap();
        let dev = est.field.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-12, "deviation {dev}");
    }

    #[test]
    fn compressible_field_fluctuates_with_unit_mean() {
        let (spec, grid) = small(Family::IsotropicScalar, 1, 0.5);
        let est = run_from_constant(&spec, &grid, 10.0, 0.0, 3, 2).unwrap();
        assert!((est.field.spatial_mean() - 1.0).abs() < 1e-12);
        assert!(est.field.max() - est.field.min() > 1e-2);
        assert!(est.field.min() > 0.0);
    }

    #[test]
    fn snapshots_match_separate_runs() {
        let (spec, grid) = small(Family::IsotropicScalar, 1, 0.5);
        let mut cfg = CorrectorConfig::new(&spec, &grid);
        cfg.burn_in = 3.0;
        cfg.time = 1.0;
        cfg.lags = vec![0.0, 0.5];
        let path = run_corrector_path(&spec, &grid, &cfg, 9, 4).unwrap();
        let mut later = cfg.clone();
        later.burn_in = 3.5;
        later.time = 1.5;
        later.lags = vec![0.0];
        let direct = run_corrector_path(&spec, &grid, &later, 9, 4).unwrap();
        assert_eq!(path.snapshots[1].values, direct.snapshots[0].values);
    }

    #[test]
    fn estimators_need_enough_replicas() {
        let (spec, grid) = small(Family::IsotropicScalar, 1, 0.5);
        let est = run_from_constant(&spec, &grid, 1.0, 0.0, 1, 0).unwrap();
        let few = vec![est; 10];
        assert!(matches!(
            two_point_correlation(&few, &[0.0]),
            Err(Error::InsufficientReplicas { needed: 50, got: 10 })
        ));
    }

    #[test]
    fn off_lattice_separation_is_rejected() {
        let grid = Grid::new(1, 64, 16.0).unwrap();
        assert!(lattice_shift(&grid, &[0.1]).is_err());
        assert_eq!(lattice_shift(&grid, &[0.5]).unwrap()[0], 2);
    }
}
