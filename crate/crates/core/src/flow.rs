//! Particle trajectories and flow maps in a frozen environment.
//!
//! Particles move by Euler-Maruyama with the velocity increment evaluated at
//! the pre-step position. Positions are kept unwrapped; the field is periodic
//! so lookups need no explicit wrap.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{effective_diffusivity, CovarianceSpec};
use crate::error::{Error, Result};
use crate::fieldsynth::{cubic_eval, fourier_eval_with, Environment, FourierScratch, FieldIncrement, Interpolation, SpectralRep};
use crate::grid::{Grid, MAX_DIM};
use crate::rng::{Purpose, RngStream};

/// Particles per molecular-noise stream; also the unit of parallel work.
pub const CHUNK: usize = 1024;

#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub replica: u64,
    pub dt: f64,
    /// Slot of the next increment to apply.
    pub slot: i64,
    pub interpolation: Interpolation,
    positions: Vec<f64>,
    origin: Vec<f64>,
    noise: RngStream,
    noise_tag: u64,
}

impl ParticleEnsemble {
    /// Ensemble at the given flat positions (`n * dim` values), about to
    /// consume increment `slot`. `noise_tag` separates independent molecular
    /// noises within one replica.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        positions: Vec<f64>,
        dt: f64,
        slot: i64,
        master_seed: u64,
        replica: u64,
        noise_tag: u64,
        interpolation: Interpolation,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if dim == 0 || !positions.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "{} coordinates do not form points in dimension {dim}",
                positions.len()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial positions".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        Ok(Self {
            dim,
            replica,
            dt,
            slot,
            interpolation,
            origin: positions.clone(),
            positions,
            noise: RngStream::new(master_seed, replica, Purpose::Molecular),
            noise_tag,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Model time `slot * dt`.
    pub fn time(&self) -> f64 {
        self.slot as f64 * self.dt
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// Applies one increment: `X += dV(X) + sqrt(nu dt) xi`.
    pub fn step(&mut self, inc: &FieldIncrement, nu: f64) -> Result<()> {
        if inc.grid.dim != self.dim {
            return Err(Error::EnvironmentMismatch(format!(
                "increment dimension {} vs ensemble dimension {}",
                inc.grid.dim, self.dim
            )));
        }
        if (inc.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::EnvironmentMismatch(format!(
                "increment dt {} vs ensemble dt {}",
                inc.dt, self.dt
            )));
        }
        if let Some(r) = inc.replica {
            if r != self.replica {
                return Err(Error::EnvironmentMismatch(format!(
                    "increment from replica {r} applied to replica {}",
                    self.replica
                )));
            }
        }
        if let Some(s) = inc.slot {
            if s != self.slot {
                return Err(Error::EnvironmentMismatch(format!(
                    "increment for slot {s} applied at slot {}",
                    self.slot
                )));
            }
        }
        let dim = self.dim;
        let amp = (nu * self.dt).sqrt();
        let slot = self.slot;
        let noise = self.noise;
        let tag = self.noise_tag << 32;
        let method = self.interpolation;
        let grid = inc.grid;
        let spectrum = match method {
            Interpolation::Fourier => Some(inc.spectrum()),
            Interpolation::Cubic => None,
        };
        let fields = inc.components();
        self.positions
            .par_chunks_mut(CHUNK * dim)
            .enumerate()
            .for_each(|(chunk, xs)| {
                let mut rng = noise.at(tag | chunk as u64, slot);
                let mut v = [0.0; MAX_DIM];
                let mut scratch = FourierScratch::default();
                for p in xs.chunks_exact_mut(dim) {
                    velocity(&grid, spectrum, fields, p, &mut v, &mut scratch);
                    for a in 0..dim {
                        let xi: f64 = rng.sample(StandardNormal);
                        p[a] += v[a] + amp * xi;
                    }
                }
            });
        if self.positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("particle positions after slot {slot}")));
        }
        self.slot += 1;
        Ok(())
    }

    /// Mean and second moment of displacements from the starting positions.
    pub fn displacement_moments(&self) -> DisplacementMoments {
        let d = self.dim;
        let n = self.len();
        let mut mean = vec![0.0; d];
        let mut second = vec![0.0; d * d];
        for (x, x0) in self.positions.chunks_exact(d).zip(self.origin.chunks_exact(d)) {
            for i in 0..d {
                let di = x[i] - x0[i];
                mean[i] += di;
                for j in 0..d {
                    second[i * d + j] += di * (x[j] - x0[j]);
                }
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        second.iter_mut().for_each(|v| *v /= n as f64);
        DisplacementMoments { time: self.time(), count: n, mean, second }
    }
}

#[inline]
fn velocity(
    grid: &Grid,
    spectrum: Option<&SpectralRep>,
    fields: &[Vec<f64>],
    x: &[f64],
    out: &mut [f64],
    scratch: &mut FourierScratch,
) {
    match spectrum {
        Some(rep) => fourier_eval_with(grid, rep, x, out, scratch),
        None => cubic_eval(grid, fields, x, out),
    }
}

/// Consuming form of [`ParticleEnsemble::step`].
pub fn step_particles(mut ens: ParticleEnsemble, inc: &FieldIncrement, nu: f64) -> Result<ParticleEnsemble> {
    ens.step(inc, nu)?;
    Ok(ens)
}

/// Displacement moments of one ensemble; `second` is row-major `d x d`
/// `E[dX dX^T]` (not centred).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementMoments {
    pub time: f64,
    pub count: usize,
    pub mean: Vec<f64>,
    pub second: Vec<f64>,
}

/// How particles start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialCondition {
    /// All at the origin.
    Origin,
    /// Independent draws from the annealed Gaussian `G_t`.
    Gaussian { time: f64 },
    /// Explicit flat coordinates.
    Points(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub particles: usize,
    pub dt: f64,
    pub start_time: f64,
    pub end_time: f64,
    pub interpolation: Interpolation,
    pub initial: InitialCondition,
    /// Times at which displacement moments are recorded.
    pub record_times: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub replica: u64,
    pub final_time: f64,
    pub final_positions: Vec<f64>,
    pub moments: Vec<DisplacementMoments>,
}

/// Draws `n` points from `N(0, (nu I + R(0)) t)`.
pub fn gaussian_points(spec: &CovarianceSpec, t: f64, n: usize, stream: &RngStream) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("Gaussian start needs t > 0, got {t}")));
    }
    let d = spec.dimension;
    let cov = effective_diffusivity(spec)? * t;
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::InvalidSpec("effective diffusivity is not positive definite".into()))?;
    let l = chol.l();
    let mut out = vec![0.0; n * d];
    for (c, block) in out.chunks_mut(CHUNK * d).enumerate() {
        let mut rng = stream.at(c as u64, 0);
        let mut xi = [0.0; MAX_DIM];
        for p in block.chunks_exact_mut(d) {
            for v in xi.iter_mut().take(d) {
                *v = rng.sample(StandardNormal);
            }
            for i in 0..d {
                p[i] = (0..=i).map(|j| l[(i, j)] * xi[j]).sum();
            }
        }
    }
    Ok(out)
}

/// Runs one replica's particle cloud from `start_time` to `end_time`.
pub fn simulate_ensemble(
    spec: &CovarianceSpec,
    grid: &Grid,
    cfg: &EnsembleConfig,
    master_seed: u64,
    replica: u64,
) -> Result<EnsembleSummary> {
    let mut env = Environment::new(spec, grid, cfg.dt, master_seed, replica)?;
    let d = spec.dimension;
    let positions = match &cfg.initial {
        InitialCondition::Origin => vec![0.0; cfg.particles * d],
        InitialCondition::Gaussian { time } => gaussian_points(
            spec,
            *time,
            cfg.particles,
            &RngStream::new(master_seed, replica, Purpose::Initial),
        )?,
        InitialCondition::Points(p) => p.clone(),
    };
    let start = env.slot_of(cfg.start_time);
    let end = env.slot_of(cfg.end_time);
    if end < start {
        return Err(Error::Config(format!(
            "end time {} precedes start time {}",
            cfg.end_time, cfg.start_time
        )));
    }
    let mut ens = ParticleEnsemble::new(d, positions, cfg.dt, start, master_seed, replica, 0, cfg.interpolation)?;
    let record: Vec<i64> = cfg.record_times.iter().map(|&t| env.slot_of(t)).collect();
    let mut moments = Vec::new();
    let push = |ens: &ParticleEnsemble, moments: &mut Vec<DisplacementMoments>| {
        for &r in &record {
            if r == ens.slot {
                moments.push(ens.displacement_moments());
            }
        }
    };
    push(&ens, &mut moments);
    while ens.slot < end {
        let inc = env.increment(ens.slot);
        ens.step(&inc, spec.nu)?;
        push(&ens, &mut moments);
    }
    Ok(EnsembleSummary {
        replica,
        final_time: ens.time(),
        final_positions: ens.positions,
        moments,
    })
}

/// Images of a periodic lattice of base points under the flow `phi_{s,t}`,
/// all driven by one shared Brownian path.
#[derive(Debug, Clone)]
pub struct FlowMapSample {
    pub dim: usize,
    /// Lattice points per side; spacing is `L / per_side`.
    pub per_side: usize,
    pub box_length: f64,
    pub s: f64,
    pub t: f64,
    pub base_points: Vec<f64>,
    pub images: Vec<f64>,
    /// `int div V(o dr, phi_r(x))` accumulated by the trapezoid rule.
    pub log_det_stratonovich: Vec<f64>,
}

impl FlowMapSample {
    pub fn spacing(&self) -> f64 {
        self.box_length / self.per_side as f64
    }

    pub fn len(&self) -> usize {
        self.base_points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.base_points.is_empty()
    }
}

/// Flow map from slot `s_slot` to `t_slot` on a lattice of `per_side^d`
/// points covering the box. `noise_tag` selects the shared Brownian path.
pub fn flow_map(
    env: &mut Environment,
    per_side: usize,
    s_slot: i64,
    t_slot: i64,
    noise_tag: u64,
    interpolation: Interpolation,
) -> Result<FlowMapSample> {
    let grid = *env.grid();
    let d = grid.dim;
    let nu = env.spec().nu;
    let dt = env.dt();
    if t_slot < s_slot {
        return Err(Error::Config("flow map needs t >= s".into()));
    }
    let lattice = Grid::new(d, per_side.next_power_of_two(), grid.length)?;
    if lattice.n != per_side {
        return Err(Error::Config(format!("lattice size {per_side} must be a power of two")));
    }
    let h = lattice.dx();
    let count = lattice.len();
    let mut base = vec![0.0; count * d];
    for p in 0..count {
        let idx = lattice.multi_index(p);
        for a in 0..d {
            base[p * d + a] = idx[a] as f64 * h;
        }
    }
    let mut images = base.clone();
    let mut log_det = vec![0.0; count];
    let noise = RngStream::new(env.master_seed(), env.replica(), Purpose::FlowNoise);
    let amp = (nu * dt).sqrt();
    let mut v = [0.0; MAX_DIM];
    let mut div_pre = vec![0.0; count];
    let mut div_post = [0.0];
    for slot in s_slot..t_slot {
        let inc = env.increment(slot);
        let div = vec![inc.spectral_divergence()];
        let div_rep = match interpolation {
            Interpolation::Fourier => Some(SpectralRep::from_values(&grid, &div)),
            Interpolation::Cubic => None,
        };
        let spectrum = match interpolation {
            Interpolation::Fourier => Some(inc.spectrum()),
            Interpolation::Cubic => None,
        };
        let mut rng = noise.at(noise_tag, slot);
        let mut scratch = FourierScratch::default();
        let mut shift = [0.0; MAX_DIM];
        for s in shift.iter_mut().take(d) {
            *s = amp * rng.sample::<f64, _>(StandardNormal);
        }
        for p in 0..count {
            let x = &mut images[p * d..(p + 1) * d];
            let mut dp = [0.0];
            velocity(&grid, div_rep.as_ref(), &div, x, &mut dp, &mut scratch);
            div_pre[p] = dp[0];
            velocity(&grid, spectrum, inc.components(), x, &mut v, &mut scratch);
            for a in 0..d {
                x[a] += v[a] + shift[a];
            }
            velocity(&grid, div_rep.as_ref(), &div, x, &mut div_post, &mut scratch);
            log_det[p] += 0.5 * (div_pre[p] + div_post[0]);
        }
    }
    if images.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("flow map images".into()));
    }
    Ok(FlowMapSample {
        dim: d,
        per_side,
        box_length: grid.length,
        s: s_slot as f64 * dt,
        t: t_slot as f64 * dt,
        base_points: base,
        images,
        log_det_stratonovich: log_det,
    })
}

/// Central-difference Jacobian determinant of the flow map at every lattice
/// point (the lattice is periodic, so every point is interior).
pub fn flow_jacobian(fm: &FlowMapSample) -> Result<Vec<f64>> {
    let d = fm.dim;
    if fm.images.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("flow map images".into()));
    }
    let lattice = Grid::new(d, fm.per_side, fm.box_length)?;
    let h = lattice.dx();
    let l = fm.box_length;
    let m = fm.per_side;
    let mut dets = Vec::with_capacity(lattice.len());
    for p in 0..lattice.len() {
        let idx = lattice.multi_index(p);
        let mut jac = nalgebra::DMatrix::<f64>::zeros(d, d);
        for b in 0..d {
            let mut fwd = [0i64; MAX_DIM];
            let mut bwd = [0i64; MAX_DIM];
            fwd[b] = 1;
            bwd[b] = -1;
            let pf = lattice.shifted(p, &fwd[..d]);
            let pb = lattice.shifted(p, &bwd[..d]);
            // Unwrap across the periodic seam: the image of x + L e_b is
            // phi(x) + L e_b.
            let wrap_f = if idx[b] + 1 == m { l } else { 0.0 };
            let wrap_b = if idx[b] == 0 { -l } else { 0.0 };
            for a in 0..d {
                let mut diff = fm.images[pf * d + a] - fm.images[pb * d + a];
                if a == b {
                    diff += wrap_f - wrap_b;
                }
                jac[(a, b)] = diff / (2.0 * h);
            }
        }
        dets.push(jac.determinant());
    }
    Ok(dets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::Family;

    fn scalar() -> (CovarianceSpec, Grid) {
        let spec = CovarianceSpec::default_scalar();
        (spec, Grid::for_spec(&spec).unwrap())
    }

    #[test]
    fn rejects_mismatched_increments() {
        let (spec, grid) = scalar();
        let mut env = Environment::new(&spec, &grid, 0.01, 1, 0).unwrap();
        let mut ens = ParticleEnsemble::new(1, vec![0.0; 4], 0.01, 0, 1, 0, 0, Interpolation::Fourier).unwrap();
        let wrong_slot = env.increment(1);
        assert!(matches!(ens.step(&wrong_slot, 1.0), Err(Error::EnvironmentMismatch(_))));
        let mut other = Environment::new(&spec, &grid, 0.01, 1, 5).unwrap();
        assert!(ens.step(&other.increment(0), 1.0).is_err());
        let mut coarse = Environment::new(&spec, &grid, 0.02, 1, 0).unwrap();
        assert!(ens.step(&coarse.increment(0), 1.0).is_err());
        assert!(ens.step(&env.increment(0), 1.0).is_ok());
        assert_eq!(ens.slot, 1);
    }

    #[test]
    fn identical_seeds_give_identical_paths() {
        let (spec, grid) = scalar();
        let mut env = Environment::new(&spec, &grid, 0.01, 2, 0).unwrap();
        let mk = || ParticleEnsemble::new(1, vec![0.7], 0.01, 0, 2, 0, 0, Interpolation::Fourier).unwrap();
        let (mut a, mut b) = (mk(), mk());
        for slot in 0..50 {
            let inc = env.increment(slot);
            a.step(&inc, spec.nu).unwrap();
            b.step(&inc, spec.nu).unwrap();
        }
        assert_eq!(a.positions(), b.positions());
    }

    #[test]
    fn simulate_is_reproducible() {
        let (spec, grid) = scalar();
        let cfg = EnsembleConfig {
            particles: 1,
            dt: 0.01,
            start_time: 0.0,
            end_time: 0.5,
            interpolation: Interpolation::Fourier,
            initial: InitialCondition::Origin,
            record_times: vec![0.25, 0.5],
        };
        let a = simulate_ensemble(&spec, &grid, &cfg, 9, 4).unwrap();
        let b = simulate_ensemble(&spec, &grid, &cfg, 9, 4).unwrap();
        assert_eq!(a.final_positions, b.final_positions);
        assert_eq!(a.moments.len(), 2);
        assert!((a.final_time - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_flow_map_has_unit_jacobian() {
        let spec = CovarianceSpec::new(2, 1.0, Family::Potential, 0.5, 1.0).unwrap();
        let grid = Grid::new(2, 128, 32.0).unwrap();
        let mut env = Environment::new(&spec, &grid, 0.005, 1, 0).unwrap();
        let fm = flow_map(&mut env, 32, 10, 10, 0, Interpolation::Cubic).unwrap();
        assert_eq!(fm.images, fm.base_points);
        assert!(flow_jacobian(&fm).unwrap().iter().all(|&d| (d - 1.0).abs() < 1e-14));
    }

    #[test]
    fn empty_ensemble_is_rejected() {
        assert!(matches!(
            ParticleEnsemble::new(1, vec![], 0.1, 0, 0, 0, 0, Interpolation::Cubic),
            Err(Error::EmptyEnsemble)
        ));
    }
}
