//! The local limit experiment: turning off the early noise, the product
//! approximation `u ~ G_t U`, and power-law fits of the resulting errors.
//!
//! Every replica runs one environment in lockstep. The density `u` starts from
//! the regularized delta `G_{t_reg}` at `t_reg`. For each rung `t_k` of the
//! ladder with layer start `q_k = t_k - t_k^beta`, two more fields start at
//! `q_k` and see the same increments: `u~` from the noiseless evolution of
//! `G_{t_reg}` up to `q_k` (the early noise averaged out) and `u_` from the
//! constant 1.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{effective_diffusivity, CovarianceSpec};
use crate::error::{Error, Result};
use crate::fieldsynth::{Environment, FieldIncrement};
use crate::grid::{Grid, MAX_DIM};
use crate::gridspde::{default_time_step, periodic_gaussian_field, DensityField, SpdeSolver};
use crate::stats::{jackknife, mean_se, ols, t_critical, Estimate};

/// `2/3` in one dimension and `d / (d + 2)` above.
pub fn default_beta(dim: usize) -> f64 {
    if dim == 1 {
        2.0 / 3.0
    } else {
        dim as f64 / (dim as f64 + 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub spec: CovarianceSpec,
    pub grid: Grid,
    pub dt: f64,
    /// Observation times, increasing.
    pub ladder: Vec<f64>,
    pub beta: f64,
    pub replicas: usize,
    /// Probe coordinates are `m sqrt(t)` for every combination of these
    /// multipliers along the axes.
    pub probe_multipliers: Vec<f64>,
    /// Bulk constant `c` in `x . (nu I + R(0))^{-1} x <= c t log t`.
    pub bulk_c: f64,
    /// Regularization time of the initial delta.
    pub t_reg: f64,
    pub seed: u64,
}

impl ExperimentPlan {
    /// Defaults: ladder `{8, 16, 32, 64}`, `default_beta`, probes
    /// `{0, +-1/2} sqrt(t)`, `c = 0.1`, `t_reg = 10 dt`.
    pub fn new(spec: CovarianceSpec, grid: Grid) -> Self {
        let dt = default_time_step(&spec, &grid);
        Self {
            spec,
            grid,
            dt,
            ladder: dyadic_ladder(8.0, 4),
            beta: default_beta(spec.dimension),
            replicas: 100,
            probe_multipliers: vec![0.0, 0.5, -0.5],
            bulk_c: 0.1,
            t_reg: 10.0 * dt,
            seed: 0,
        }
    }

    /// Start of the noisy layer before `t`.
    pub fn layer_start(&self, t: f64) -> f64 {
        t - t.powf(self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.grid.check_resolves(&self.spec)?;
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if self.ladder.is_empty() || self.ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("ladder must be a nonempty increasing list".into()));
        }
        if self.probe_multipliers.is_empty() {
            return Err(Error::Config("at least one probe multiplier is required".into()));
        }
        if !(self.t_reg > 0.0) || !(self.dt > 0.0) {
            return Err(Error::Config("t_reg and dt must be positive".into()));
        }
        for &t in &self.ladder {
            let q = self.layer_start(t);
            if !(q > self.t_reg) {
                return Err(Error::Config(format!("layer start q = {q:.4} at t = {t} is not after t_reg")));
            }
            for p in self.probes(t)? {
                if !self.in_bulk(&p.coord[..self.grid.dim], t)? {
                    return Err(Error::Config(format!(
                        "probe {:?} at t = {t} lies outside the diffusive bulk (c = {})",
                        &p.coord[..self.grid.dim],
                        self.bulk_c
                    )));
                }
            }
        }
        Ok(())
    }

    fn in_bulk(&self, x: &[f64], t: f64) -> Result<bool> {
        let inv = bulk_metric(&self.spec)?;
        let xv = nalgebra::DVector::from_column_slice(x);
        let q = (xv.transpose() * &inv * &xv)[(0, 0)];
        Ok(q <= self.bulk_c * t * t.ln() + 1e-12)
    }

    /// Probe nodes at time `t`, snapped to the nearest grid node.
    pub fn probes(&self, t: f64) -> Result<Vec<Probe>> {
        let d = self.grid.dim;
        let m = self.probe_multipliers.len();
        let mut out = Vec::with_capacity(m.pow(d as u32));
        for c in 0..m.pow(d as u32) {
            let mut rem = c;
            let mut idx = [0usize; MAX_DIM];
            for slot in idx.iter_mut().take(d) {
                let x = self.probe_multipliers[rem % m] * t.sqrt();
                rem /= m;
                let steps = (x / self.grid.dx()).round() as i64;
                *slot = steps.rem_euclid(self.grid.n as i64) as usize;
            }
            let node = self.grid.flat_index(&idx[..d]);
            if out.iter().any(|p: &Probe| p.node == node) {
                continue;
            }
            out.push(Probe { node, coord: self.grid.position(node) });
        }
        Ok(out)
    }
}

/// `t0 2^k` for `k < count`.
pub fn dyadic_ladder(t0: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| t0 * 2f64.powi(k as i32)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub node: usize,
    pub coord: [f64; MAX_DIM],
}

/// Which companion fields to evolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outputs {
    /// `u~` started from `G_q` at `q`.
    pub turnoff: bool,
    /// `u_` started from 1 at `q`.
    pub product: bool,
}

impl Outputs {
    pub const ALL: Outputs = Outputs { turnoff: true, product: true };
    pub const DENSITY_ONLY: Outputs = Outputs { turnoff: false, product: false };
}

/// Probe values of one replica at one rung.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungRecord {
    pub u: Vec<f64>,
    pub turned_off: Vec<f64>,
    pub from_constant: Vec<f64>,
}

/// Mean-square errors along the ladder, with per-replica values for
/// resampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub name: String,
    pub times: Vec<f64>,
    pub values: Vec<Estimate>,
    /// `per_replica[r][k]`: replica `r`'s error at rung `k`.
    pub per_replica: Option<Vec<Vec<f64>>>,
}

impl ErrorCurve {
    fn from_replicas(name: &str, times: &[f64], per_replica: Vec<Vec<f64>>) -> Self {
        let values = (0..times.len())
            .map(|k| mean_se(&per_replica.iter().map(|r| r[k]).collect::<Vec<_>>()))
            .collect();
        Self { name: name.into(), times: times.to_vec(), values, per_replica: Some(per_replica) }
    }

    /// The curve multiplied by `t^power`.
    pub fn scaled(&self, power: f64) -> Self {
        let f: Vec<f64> = self.times.iter().map(|t| t.powf(power)).collect();
        let values = self
            .values
            .iter()
            .zip(&f)
            .map(|(e, s)| Estimate { value: e.value * s, se: e.se * s })
            .collect();
        let per_replica = self
            .per_replica
            .as_ref()
            .map(|rows| rows.iter().map(|r| r.iter().zip(&f).map(|(v, s)| v * s).collect()).collect());
        Self { name: format!("{} x t^{power}", self.name), times: self.times.clone(), values, per_replica }
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1].value < w[0].value)
    }
}

/// Everything one ladder run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderResult {
    pub plan: ExperimentPlan,
    pub probes: Vec<Vec<Probe>>,
    /// `G_t` (periodized) at each rung's probes.
    pub gaussian: Vec<Vec<f64>>,
    /// `records[r][k]`.
    pub records: Vec<Vec<RungRecord>>,
}

impl LadderResult {
    fn curve(&self, name: &str, f: impl Fn(usize, &RungRecord) -> f64) -> ErrorCurve {
        let rows = self.records.iter().map(|row| row.iter().enumerate().map(|(k, rec)| f(k, rec)).collect()).collect();
        ErrorCurve::from_replicas(name, &self.plan.ladder, rows)
    }

    fn probe_mean(values: impl Iterator<Item = f64>, count: usize) -> f64 {
        values.sum::<f64>() / count as f64
    }

    /// `E |u - G_t|^2`, the local CLT error.
    pub fn clt_error(&self) -> ErrorCurve {
        self.curve("clt_error", |k, rec| {
            let g = &self.gaussian[k];
            Self::probe_mean(rec.u.iter().zip(g).map(|(u, g)| (u - g).powi(2)), g.len())
        })
    }

    /// `E |u - u~_q|^2`.
    pub fn turnoff_gap(&self) -> Result<ErrorCurve> {
        if self.records.iter().flatten().any(|r| r.turned_off.is_empty()) {
            return Err(Error::Config("turn-off fields were not evolved".into()));
        }
        Ok(self.curve("turnoff_gap", |_, rec| {
            Self::probe_mean(rec.u.iter().zip(&rec.turned_off).map(|(u, v)| (u - v).powi(2)), rec.u.len())
        }))
    }

    /// `E |u - G_t u_q|^2`.
    pub fn product_error(&self) -> Result<ErrorCurve> {
        self.require_product()?;
        Ok(self.curve("product_error", |k, rec| {
            let g = &self.gaussian[k];
            Self::probe_mean(
                rec.u.iter().zip(&rec.from_constant).zip(g).map(|((u, c), g)| (u - g * c).powi(2)),
                g.len(),
            )
        }))
    }

    /// `E |u / G_t - u_q|^2`.
    pub fn ratio_error(&self) -> Result<ErrorCurve> {
        self.require_product()?;
        Ok(self.curve("ratio_error", |k, rec| {
            let g = &self.gaussian[k];
            Self::probe_mean(
                rec.u.iter().zip(&rec.from_constant).zip(g).map(|((u, c), g)| (u / g - c).powi(2)),
                g.len(),
            )
        }))
    }

    fn require_product(&self) -> Result<()> {
        if self.records.iter().flatten().any(|r| r.from_constant.is_empty()) {
            return Err(Error::Config("constant-datum fields were not evolved".into()));
        }
        Ok(())
    }
}

/// Runs every replica of the plan through the whole ladder.
pub fn run_ladder(plan: &ExperimentPlan, outputs: Outputs) -> Result<LadderResult> {
    plan.validate()?;
    if plan.replicas < 2 {
        return Err(Error::InsufficientReplicas { needed: 2, got: plan.replicas });
    }
    let probes: Vec<Vec<Probe>> = plan.ladder.iter().map(|&t| plan.probes(t)).collect::<Result<_>>()?;
    let gaussian: Vec<Vec<f64>> = plan
        .ladder
        .iter()
        .zip(&probes)
        .map(|(&t, ps)| {
            let g = periodic_gaussian_field(&plan.spec, &plan.grid, t)?;
            Ok(ps.iter().map(|p| g.values[p.node]).collect())
        })
        .collect::<Result<_>>()?;
    let heat = if outputs.turnoff { heat_snapshots(plan)? } else { Vec::new() };
    let records = (0..plan.replicas as u64)
        .into_par_iter()
        .map(|r| run_replica(plan, outputs, &probes, &heat, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(LadderResult { plan: plan.clone(), probes, gaussian, records })
}

/// `G_{t_reg}` evolved by the scheme with zero increments, at each `q_k`.
fn heat_snapshots(plan: &ExperimentPlan) -> Result<Vec<DensityField>> {
    let (grid, dt) = (&plan.grid, plan.dt);
    let mut solver = SpdeSolver::new(&plan.spec, grid, dt)?;
    let zero = FieldIncrement::zero(*grid, dt);
    let slot_of = |t: f64| (t / dt).round() as i64;
    let mut slot = slot_of(plan.t_reg);
    let mut m = periodic_gaussian_field(&plan.spec, grid, slot as f64 * dt)?;
    let mut out = Vec::with_capacity(plan.ladder.len());
    for &t in &plan.ladder {
        let s = slot_of(plan.layer_start(t));
        while slot < s {
            solver.step(&mut m, &zero)?;
            slot += 1;
        }
        m.time = slot as f64 * dt;
        out.push(m.clone());
    }
    Ok(out)
}

struct Companion {
    start: i64,
    field: DensityField,
}

fn run_replica(
    plan: &ExperimentPlan,
    outputs: Outputs,
    probes: &[Vec<Probe>],
    heat: &[DensityField],
    replica: u64,
) -> Result<Vec<RungRecord>> {
    let (spec, grid, dt) = (&plan.spec, &plan.grid, plan.dt);
    let mut env = Environment::new(spec, grid, dt, plan.seed, replica)?;
    let mut solver = SpdeSolver::new(spec, grid, dt)?;
    let start = env.slot_of(plan.t_reg);
    let stops: Vec<i64> = plan.ladder.iter().map(|&t| env.slot_of(t)).collect();
    let mut u = periodic_gaussian_field(spec, grid, start as f64 * dt)?;
    let mut turned: Vec<Option<Companion>> = Vec::new();
    let mut constant: Vec<Option<Companion>> = Vec::new();
    for (k, &t) in plan.ladder.iter().enumerate() {
        let s = env.slot_of(plan.layer_start(t));
        let tq = s as f64 * dt;
        turned.push(if outputs.turnoff {
            Some(Companion { start: s, field: heat[k].clone() })
        } else {
            None
        });
        constant.push(if outputs.product {
            Some(Companion { start: s, field: DensityField::constant(*grid, 1.0, tq) })
        } else {
            None
        });
    }
    let mut out = Vec::with_capacity(plan.ladder.len());
    let last = *stops.last().expect("nonempty ladder");
    let mut rung = 0;
    for slot in start..last {
        let inc = env.increment(slot);
        if inc.slot != Some(slot) || inc.replica != Some(replica) {
            return Err(Error::EnvironmentMismatch(format!("increment tagged {:?} used for slot {slot}", inc.slot)));
        }
        solver.step(&mut u, &inc)?;
        for c in turned.iter_mut().chain(constant.iter_mut()).flatten() {
            if slot >= c.start {
                solver.step(&mut c.field, &inc)?;
            }
        }
        while rung < stops.len() && slot + 1 == stops[rung] {
            let at = |f: &DensityField| probes[rung].iter().map(|p| f.values[p.node]).collect::<Vec<_>>();
            let take = |c: &mut Option<Companion>| c.take().map(|c| at(&c.field)).unwrap_or_default();
            out.push(RungRecord {
                u: at(&u),
                turned_off: take(&mut turned[rung]),
                from_constant: take(&mut constant[rung]),
            });
            rung += 1;
        }
    }
    Ok(out)
}

/// The turn-off gap `E |u(t) - u~_q(t)|^2` at a single time.
pub fn turnoff_experiment(plan: &ExperimentPlan, t: f64) -> Result<Estimate> {
    let single = ExperimentPlan { ladder: vec![t], ..plan.clone() };
    let res = run_ladder(&single, Outputs { turnoff: true, product: false })?;
    Ok(res.turnoff_gap()?.values[0])
}

/// `E |u(t) - G_t u_q(t)|^2` along the plan's ladder.
pub fn product_error_curve(plan: &ExperimentPlan) -> Result<ErrorCurve> {
    run_ladder(plan, Outputs { turnoff: false, product: true })?.product_error()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SlopeMethod {
    /// Delete-one-replica jackknife over the whole curve.
    Jackknife,
    /// Residual scatter of the log-log points.
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// 95% interval for the slope.
    pub ci: (f64, f64),
    pub method: SlopeMethod,
}

impl RateFit {
    pub fn excludes_zero(&self) -> bool {
        self.ci.0 > 0.0 || self.ci.1 < 0.0
    }
}

/// Fewest ladder rungs [`rate_fit`] accepts.
pub const MIN_FIT_POINTS: usize = 4;

/// Least-squares slope of `log e` against `log t` with a 95% interval.
pub fn rate_fit(curve: &ErrorCurve) -> Result<RateFit> {
    let n = curve.times.len();
    if n < MIN_FIT_POINTS {
        return Err(Error::Config(format!("rate fit needs at least {MIN_FIT_POINTS} points, got {n}")));
    }
    if curve.values.iter().any(|e| !(e.value > 0.0)) || curve.times.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Domain("rate fit needs positive times and errors".into()));
    }
    let lx: Vec<f64> = curve.times.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = curve.values.iter().map(|e| e.value.ln()).collect();
    let fit = ols(&lx, &ly)?;
    let slope_of = |means: &[f64]| -> f64 {
        if means.iter().any(|m| !(*m > 0.0)) {
            return f64::NAN;
        }
        let y: Vec<f64> = means.iter().map(|m| m.ln()).collect();
        ols(&lx, &y).map(|f| f.slope).unwrap_or(f64::NAN)
    };
    if let Some(rows) = curve.per_replica.as_ref().filter(|r| r.len() >= 2) {
        let jk = jackknife(rows, slope_of)?;
        if jk.se.is_finite() {
            let half = t_critical(0.95, rows.len() - 1) * jk.se;
            return Ok(RateFit {
                slope: fit.slope,
                intercept: fit.intercept,
                slope_se: jk.se,
                ci: (fit.slope - half, fit.slope + half),
                method: SlopeMethod::Jackknife,
            });
        }
    }
    let half = t_critical(0.95, fit.dof) * fit.slope_se;
    Ok(RateFit {
        slope: fit.slope,
        intercept: fit.intercept,
        slope_se: fit.slope_se,
        ci: (fit.slope - half, fit.slope + half),
        method: SlopeMethod::Residual,
    })
}

/// `(nu I + R(0))^{-1}` for callers that need the bulk metric directly.
pub fn bulk_metric(spec: &CovarianceSpec) -> Result<DMatrix<f64>> {
    effective_diffusivity(spec)?
        .try_inverse()
        .ok_or_else(|| Error::InvalidSpec("singular effective diffusivity".into()))
}
