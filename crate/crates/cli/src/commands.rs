//! One function per subcommand. Each writes its tables into `out` and returns
//! the checks it evaluated; the caller records them in the manifest.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use kraichnan_core::corrector::{
    sample_correctors, time_correlation, time_correlation_contrast, two_point_correlation, CorrectorConfig,
    CorrelationRow,
};
use kraichnan_core::covariance::{chi_closed_form, eval_r, CovarianceSpec, Family};
use kraichnan_core::fieldsynth::{Environment, FieldSynthesizer, Interpolation};
use kraichnan_core::flow::{simulate_ensemble, EnsembleConfig, InitialCondition};
use kraichnan_core::grid::Grid;
use kraichnan_core::gridspde::{
    kde_with_error, periodic_gaussian_field, smooth, solve_spde, solve_spde_refined,
};
use kraichnan_core::io::{write_density, write_increment, write_rows_to, write_zfield_csv};
use kraichnan_core::llt::{dyadic_ladder, rate_fit, run_ladder, ErrorCurve, ExperimentPlan, Outputs, MIN_FIT_POINTS};
use kraichnan_core::moment2::{
    chi_closed_field, envelope_excess, fit_gaussian_envelope, mc_cross_check, solve_chi_with, solve_sm,
    stationarity_residual, CrossCheckConfig, SmSolver, ZField,
};
use kraichnan_core::rng::{Purpose, RngStream};
use kraichnan_core::stats::{mean_se, ols};
use kraichnan_core::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }
}

/// What a subcommand produced.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub outputs: Vec<String>,
    pub checks: Vec<Check>,
}

impl Artifacts {
    fn file(&mut self, out: &Path, name: &str) -> std::path::PathBuf {
        self.outputs.push(name.into());
        out.join(name)
    }
}

fn setup(cfg: &Config) -> Result<(CovarianceSpec, Grid, f64)> {
    let spec = cfg.spec()?;
    let grid = cfg.grid(&spec)?;
    let dt = cfg.dt(&spec, &grid);
    Ok((spec, grid, dt))
}

/// Families whose corrector is the constant 1.
fn constant_corrector(spec: &CovarianceSpec) -> bool {
    spec.family == Family::Incompressible || spec.sigma2 == 0.0
}

fn axis_vector(d: usize, first: f64) -> Vec<f64> {
    let mut z = vec![0.0; d];
    z[0] = first;
    z
}

#[derive(Serialize)]
struct CovRow {
    lag_nodes: usize,
    separation: f64,
    i: usize,
    j: usize,
    estimate: f64,
    stderr: f64,
    reference: f64,
}

pub fn synth_check(cfg: &Config, out: &Path) -> Result<Artifacts> {
    let (spec, grid, dt) = setup(cfg)?;
    let s = &cfg.synth_check;
    let d = spec.dimension;
    let entries = d * d;
    if s.draws < 2 {
        return Err(Error::InsufficientReplicas { needed: 2, got: s.draws });
    }
    let stream = RngStream::new(cfg.run.seed, 0, Purpose::Environment);
    let template = FieldSynthesizer::new(&spec, &grid, dt)?;
    let chunk = 64usize;
    let starts: Vec<usize> = (0..s.draws).step_by(chunk).collect();
    // Per draw: spatially averaged products for every (lag, i, j), and |div|.
    let per_draw: Vec<(Vec<f64>, f64)> = starts
        .par_iter()
        .flat_map_iter(|&start| {
            let mut synth = template.clone();
            (start..(start + chunk).min(s.draws))
                .map(|k| {
                    let inc = synth.draw(&mut stream.at(0, k as i64));
                    let div = inc.spectral_divergence().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    let mut row = Vec::with_capacity(s.lags.len() * entries);
                    for &lag in &s.lags {
                        let mut shift = vec![0i64; d];
                        shift[0] = lag as i64;
                        for i in 0..d {
                            for j in 0..d {
                                let (a, b) = (inc.component(i), inc.component(j));
                                let m = (0..grid.len()).map(|x| a[x] * b[grid.shifted(x, &shift)]).sum::<f64>()
                                    / grid.len() as f64;
                                row.push(m / dt);
                            }
                        }
                    }
                    (row, div)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let mut a = Artifacts::default();
    let first = template.clone().draw(&mut stream.at(0, 0));
    write_increment(&mut BufWriter::new(File::create(a.file(out, "increment.krfd"))?), &first)?;

    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    let mut pass = true;
    for (li, &lag) in s.lags.iter().enumerate() {
        let sep = lag as f64 * grid.dx();
        let r = eval_r(&spec, &axis_vector(d, sep))?;
        for i in 0..d {
            for j in 0..d {
                let col = li * d * d + i * d + j;
                let e = mean_se(&per_draw.iter().map(|(row, _)| row[col]).collect::<Vec<_>>());
                let ok = e.within(r.get(i, j), s.sigmas, 0.0);
                pass &= ok;
                if !ok {
                    worst = worst.max((e.value - r.get(i, j)).abs() / e.se);
                }
                rows.push(CovRow {
                    lag_nodes: lag,
                    separation: sep,
                    i,
                    j,
                    estimate: e.value,
                    stderr: e.se,
                    reference: r.get(i, j),
                });
            }
        }
    }
    write_rows_to(&a.file(out, "synth_covariance.csv"), &rows)?;
    a.checks.push(Check::new(
        "increment covariance",
        pass,
        if pass {
            format!("{} entries within {} SE of R dt", rows.len(), s.sigmas)
        } else {
            format!("worst deviation {worst:.2} SE")
        },
    ));
    if spec.family == Family::Incompressible {
        let div = per_draw.iter().map(|(_, v)| *v).fold(0.0, f64::max);
        a.checks.push(Check::new("spectral divergence", div <= s.divergence_tol, format!("max |div| {div:.2e}")));
    }
    Ok(a)
}

#[derive(Serialize)]
struct MomentRow {
    i: usize,
    j: usize,
    estimate: f64,
    stderr: f64,
    reference: f64,
}

pub fn annealed(cfg: &Config, out: &Path) -> Result<Artifacts> {
    let (spec, grid, dt) = setup(cfg)?;
    let s = &cfg.annealed;
    let d = spec.dimension;
    if s.replicas < 2 {
        return Err(Error::InsufficientReplicas { needed: 2, got: s.replicas });
    }
    let ens = EnsembleConfig {
        particles: s.particles,
        dt,
        start_time: 0.0,
        end_time: s.time,
        interpolation: s.interpolation.unwrap_or(Interpolation::default_for(d)),
        initial: InitialCondition::Origin,
        record_times: vec![s.time],
    };
    let runs: Vec<_> = (0..s.replicas as u64)
        .into_par_iter()
        .map(|r| simulate_ensemble(&spec, &grid, &ens, cfg.run.seed, r))
        .collect::<Result<_>>()?;
    let r0 = eval_r(&spec, &vec![0.0; d])?;
    let mut a = Artifacts::default();
    let mut rows = Vec::new();
    let mut pass = true;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { spec.nu } else { 0.0 } + r0.get(i, j);
            let e = mean_se(&runs.iter().map(|r| r.moments[0].second[i * d + j] / s.time).collect::<Vec<_>>());
            pass &= e.within(target, s.sigmas, 0.0);
            rows.push(MomentRow { i, j, estimate: e.value, stderr: e.se, reference: target });
        }
    }
    write_rows_to(&a.file(out, "annealed_covariance.csv"), &rows)?;
    if s.export_positions {
        let mut w = csv::Writer::from_path(a.file(out, "positions.csv"))?;
        let mut header = vec!["replica".to_string(), "particle".to_string()];
        header.extend((1..=d).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        let first = &runs[0];
        for (p, x) in first.final_positions.chunks_exact(d).enumerate() {
            let mut rec = vec![first.replica.to_string(), p.to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    a.checks.push(Check::new(
        "Cov(X_t)/t vs nu I + R(0)",
        pass,
        rows.iter().map(|r| format!("[{}{}] {:.4}+-{:.4}", r.i, r.j, r.estimate, r.stderr)).collect::<Vec<_>>().join(" "),
    ));
    Ok(a)
}

pub fn quenched(cfg: &Config, out: &Path) -> Result<Artifacts> {
    let (spec, grid, dt) = setup(cfg)?;
    let s = &cfg.quenched;
    let d = spec.dimension;
    let t_reg = s.t_reg_steps * dt;
    let seed = cfg.run.seed;
    let ens = EnsembleConfig {
        particles: s.particles,
        dt,
        start_time: t_reg,
        end_time: s.time,
        interpolation: Interpolation::default_for(d),
        initial: InitialCondition::Gaussian { time: t_reg },
        record_times: vec![],
    };
    let cloud = simulate_ensemble(&spec, &grid, &ens, seed, s.replica)?;
    let u0 = periodic_gaussian_field(&spec, &grid, t_reg)?;
    let mut env = Environment::new(&spec, &grid, dt, seed, s.replica)?;
    let u = solve_spde(&u0, t_reg, s.time, &mut env)?;
    let fine = solve_spde_refined(&u0, t_reg, s.time, &mut env)?;
    let h = s.bandwidth_cells * grid.dx();
    let kde = kde_with_error(&cloud.final_positions, h, &grid)?;
    let radius = s.bulk_radius * ((spec.nu + spec.sigma2) * s.time).sqrt();
    let bulk = |node: usize| {
        let x = grid.position(node);
        x[..d].iter().map(|v| v * v).sum::<f64>().sqrt() <= radius
    };
    let bias = smooth(&u, h).sup_diff_where(&u, bulk);
    let scheme = u.sup_diff_where(&fine, bulk);
    let se = (0..grid.len()).filter(|&n| bulk(n)).map(|n| kde.stderr[n]).fold(0.0, f64::max);
    let gap = kde.density.sup_diff_where(&u, bulk);
    let budget = s.budget_factor * (bias + se + scheme);

    let mut a = Artifacts::default();
    let mut w = csv::Writer::from_path(a.file(out, "quenched_density.csv"))?;
    let mut header: Vec<String> = ["x", "y", "z"].iter().take(d).map(|v| v.to_string()).collect();
    header.extend(["spde", "kde", "kde_stderr", "bulk"].map(String::from));
    w.write_record(&header)?;
    for node in 0..grid.len() {
        let x = grid.position(node);
        let mut rec: Vec<String> = x[..d].iter().map(|v| v.to_string()).collect();
        rec.push(u.values[node].to_string());
        rec.push(kde.density.values[node].to_string());
        rec.push(kde.stderr[node].to_string());
        rec.push(bulk(node).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    write_density(&mut BufWriter::new(File::create(a.file(out, "density.krfd"))?), &u)?;

    a.checks.push(Check::new(
        "KDE vs grid SPDE on the bulk",
        gap <= budget,
        format!("sup gap {gap:.2e} vs budget {budget:.2e} (bias {bias:.1e}, MC SE {se:.1e}, scheme {scheme:.1e})"),
    ));
    let (lo, hi) = (u.min(), u.max());
    a.checks.push(Check::new("negativity monitor", lo >= -1e-3 * hi, format!("min u {lo:.2e}, max u {hi:.2e}")));
    Ok(a)
}

#[derive(Serialize)]
struct TimeRow {
    time: f64,
    value: f64,
}

/// Invariant density on `grid` from the cheapest exact route: the constant 1,
/// the closed form, or (with `None` for closed) the numeric solve.
fn chi_reference(spec: &CovarianceSpec, grid: &Grid, s: &crate::config::ChiSection) -> Result<(ZField, bool)> {
    if constant_corrector(spec) {
        Ok((ZField::constant(*grid, 1.0), true))
    } else if spec.family == Family::IsotropicScalar {
        Ok((chi_closed_field(spec, grid)?, true))
    } else {
        Ok((solve_chi_with(spec, grid, s.tol, s.max_steps)?, false))
    }
}

pub fn chi(cfg: &Config, out: &Path) -> Result<Artifacts> {
    let (spec, grid, _) = setup(cfg)?;
    let s = &cfg.chi;
    let mut a = Artifacts::default();

    let numeric = solve_chi_with(&spec, &grid, s.tol, s.max_steps)?;
    let (reference, closed) = chi_reference(&spec, &grid, s)?;
    if closed {
        let err = numeric.sup_diff(&reference);
        write_zfield_csv(File::create(a.file(out, "chi.csv"))?, &numeric, Some(&reference))?;
        a.checks.push(Check::new("chi numeric vs closed form", err <= s.sup_tol, format!("sup error {err:.2e}")));
    } else {
        write_zfield_csv(File::create(a.file(out, "chi.csv"))?, &numeric, None)?;
    }

    if closed && !constant_corrector(&spec) {
        let fine = Grid::new(grid.dim, 2 * grid.n, grid.length)?;
        let r1 = stationarity_residual(&reference, &spec)?;
        let r2 = stationarity_residual(&chi_closed_field(&spec, &fine)?, &spec)?;
        let ratio = r1 / r2;
        a.checks.push(Check::new(
            "stationarity residual order",
            (ratio - s.residual_ratio).abs() <= s.residual_ratio_tol,
            format!("residual ratio on doubling {ratio:.3}"),
        ));
    }

    let zgrid = Grid::new(spec.dimension, s.sm_n, s.sm_length)?;
    let chi_z = chi_reference(&spec, &zgrid, s)?.0;
    let traj = solve_sm(&spec, &zgrid, &s.sm_times)?;
    let errs: Vec<f64> = traj.iter().map(|f| f.sup_diff(&chi_z)).collect();
    let rows: Vec<TimeRow> = s.sm_times.iter().zip(&errs).map(|(&time, &value)| TimeRow { time, value }).collect();
    write_rows_to(&a.file(out, "sm_rate.csv"), &rows)?;
    if constant_corrector(&spec) {
        // The constant datum is already invariant; there is no rate to fit.
        let worst = errs.iter().copied().fold(0.0, f64::max);
        a.checks.push(Check::new("S_T stays at chi", worst <= 1e-10, format!("sup |S_T - chi| {worst:.1e}")));
    } else {
        let logs: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let fit = ols(&s.sm_times.iter().map(|t| t.ln()).collect::<Vec<_>>(), &logs)?;
        a.checks.push(Check::new(
            "S_T -> chi rate",
            (fit.slope - s.sm_slope).abs() <= s.sm_slope_tol,
            format!("log-log slope {:.3}", fit.slope),
        ));
    }

    let d = spec.dimension;
    let z0 = vec![0.0; d];
    let w = s.bump_width;
    let norm = (w * (2.0 * std::f64::consts::PI).sqrt()).powi(d as i32).recip();
    let mut field = ZField::from_fn(grid, |z| {
        let r2: f64 = z.iter().map(|v| grid.wrap_signed(*v).powi(2)).sum();
        norm * (-0.5 * r2 / (w * w)).exp()
    });
    let mut solver = SmSolver::new(&spec, &grid)?;
    let mut snaps = Vec::new();
    for &t in &s.envelope_times {
        solver.advance_to(&mut field, t)?;
        snaps.push((t, field.clone()));
    }
    let fit_on: Vec<(f64, &ZField)> = snaps.iter().take(s.envelope_fit.max(1)).map(|(t, f)| (*t, f)).collect();
    let c = fit_gaussian_envelope(&z0, &fit_on)?;
    let excess: Vec<TimeRow> =
        snaps.iter().map(|(t, f)| TimeRow { time: *t, value: envelope_excess(&z0, *t, f, c) / f.max() }).collect();
    write_rows_to(&a.file(out, "envelope.csv"), &excess)?;
    let worst = excess.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max);
    a.checks.push(Check::new(
        "Gaussian envelope",
        worst <= s.envelope_tol,
        format!("C = {c:.4}; worst excess / peak {worst:.2e}"),
    ));
    Ok(a)
}

pub fn corrector(cfg: &Config, out: &Path) -> Result<Artifacts> {
    let (spec, grid, dt) = setup(cfg)?;
    let s = &cfg.corrector;
    let d = spec.dimension;
    let mut cc = CorrectorConfig::new(&spec, &grid);
    cc.dt = dt;
    cc.time = s.time;
    if let Some(m) = s.burn_in {
        cc.burn_in = m;
    }
    let unit = spec.corr_length * spec.corr_length / spec.nu;
    cc.lags = s.lag_units.iter().map(|m| m * unit).collect();
    let samples = sample_correctors(&spec, &grid, &cc, cfg.run.seed, s.replicas)?;
    let est: Vec<_> = samples.iter().map(|x| x.estimate()).collect();
    let mut a = Artifacts::default();

    let (chi_field, _) = chi_reference(&spec, &grid, &cfg.chi)?;
    let mut rows = Vec::new();
    let mut pass = true;
    for &z in &s.separations {
        let zv = axis_vector(d, z);
        let e = two_point_correlation(&est, &zv)?;
        let reference = match spec.family {
            Family::IsotropicScalar => chi_closed_form(&spec, &zv)?,
            _ => chi_field.values[grid.shifted(0, &[(z / grid.dx()).round() as i64, 0, 0][..d])],
        };
        pass &= e.within(reference, s.sigmas, 1e-10);
        rows.push(CorrelationRow { coordinate: z, estimate: e.value, stderr: e.se, reference: Some(reference) });
    }
    write_rows_to(&a.file(out, "two_point.csv"), &rows)?;
    a.checks.push(Check::new(
        "E[U(0)U(z)] vs chi(z)",
        pass,
        rows.iter().map(|r| format!("z={}: {:.4}+-{:.4}", r.coordinate, r.estimate, r.stderr)).collect::<Vec<_>>().join("; "),
    ));
    let lo = est.iter().map(|e| e.field.min()).fold(f64::INFINITY, f64::min);
    a.checks.push(Check::new("positivity", lo > 0.0, format!("min U {lo:.3e}")));

    let corr: Vec<_> = (0..cc.lags.len()).map(|k| time_correlation(&samples, k)).collect::<Result<_>>()?;
    let trows: Vec<CorrelationRow> = corr
        .iter()
        .zip(&cc.lags)
        .map(|(e, &tau)| CorrelationRow { coordinate: tau, estimate: e.value, stderr: e.se, reference: None })
        .collect();
    write_rows_to(&a.file(out, "time_correlation.csv"), &trows)?;
    if constant_corrector(&spec) {
        let dev = est
            .iter()
            .flat_map(|e| e.field.values.iter())
            .map(|v| (v - 1.0).abs())
            .fold(0.0, f64::max);
        a.checks.push(Check::new("U is identically 1", dev <= 1e-10, format!("max |U - 1| {dev:.1e}")));
        return Ok(a);
    }
    if let Some(first) = cc.lags.iter().position(|&t| t > 0.0) {
        let last = cc.lags.len() - 1;
        if last > first {
            let c = time_correlation_contrast(&samples, first, last)?;
            a.checks.push(Check::new(
                "time decorrelation",
                c.value > s.sigmas * c.se,
                format!("corr({}) - corr({}) = {:.4}+-{:.4}", cc.lags[first], cc.lags[last], c.value, c.se),
            ));
        }
    }
    let c0 = corr[0].value.abs();
    let within = corr
        .iter()
        .zip(&cc.lags)
        .all(|(e, &tau)| e.value <= c0 * (1.0 + tau).powf(-0.25) + s.sigmas * e.se);
    a.checks.push(Check::new("decorrelation envelope", within, format!("envelope constant {c0:.4}")));
    Ok(a)
}

#[derive(Serialize)]
struct BinRow {
    bin_centre: f64,
    mc_mass: f64,
    mc_stderr: f64,
    pde_mass: f64,
    scheme_error: f64,
}

pub fn moment_cross(cfg: &Config, out: &Path) -> Result<Artifacts> {
    let (spec, grid, _) = setup(cfg)?;
    let s = &cfg.moment_cross;
    let cc = CrossCheckConfig {
        replicas: s.replicas,
        pairs_per_replica: s.pairs,
        horizon: s.horizon,
        z0: s.z0.clone(),
        s0: s.s0,
        bin_cells: s.bin_cells,
        master_seed: cfg.run.seed,
        interpolation: s.interpolation.unwrap_or(Interpolation::default_for(spec.dimension)),
    };
    let rep = mc_cross_check(&spec, &grid, &cc)?;
    let mut a = Artifacts::default();
    let rows: Vec<BinRow> = (0..rep.bin_centres.len())
        .map(|k| BinRow {
            bin_centre: rep.bin_centres[k],
            mc_mass: rep.mc_mass[k],
            mc_stderr: rep.mc_se[k],
            pde_mass: rep.pde_mass[k],
            scheme_error: rep.scheme_error[k],
        })
        .collect();
    write_rows_to(&a.file(out, "moment_cross.csv"), &rows)?;
    a.checks.push(Check::new(
        "separation density",
        rep.density_ok(),
        format!("sup gap {:.2e} vs 3 x {:.2e}", rep.sup_discrepancy, rep.combined_error),
    ));
    a.checks.push(Check::new(
        "separation variance",
        rep.variance_ok(),
        format!("MC {:.4}+-{:.4} vs PDE {:.4}", rep.mc_variance.value, rep.mc_variance.se, rep.pde_variance),
    ));
    Ok(a)
}

#[derive(Serialize)]
struct CurveRow<'a> {
    curve: &'a str,
    time: f64,
    value: f64,
    stderr: f64,
}

#[derive(Serialize)]
struct FitRow<'a> {
    curve: &'a str,
    slope: f64,
    intercept: f64,
    slope_stderr: f64,
    ci_low: f64,
    ci_high: f64,
    method: String,
}

pub fn llt(cfg: &Config, out: &Path) -> Result<Artifacts> {
    let (spec, grid, dt) = setup(cfg)?;
    let s = &cfg.llt;
    let mut plan = ExperimentPlan::new(spec, grid);
    plan.dt = dt;
    plan.ladder = dyadic_ladder(s.ladder_start, s.ladder);
    if let Some(b) = s.beta {
        plan.beta = b;
    }
    plan.replicas = s.replicas;
    plan.probe_multipliers = s.probe_multipliers.clone();
    plan.bulk_c = s.bulk_c;
    plan.t_reg = s.t_reg_steps * dt;
    plan.seed = cfg.run.seed;
    let res = run_ladder(&plan, Outputs { turnoff: s.turnoff, product: s.product })?;

    let mut curves: Vec<ErrorCurve> = vec![res.clt_error()];
    if s.turnoff {
        curves.push(res.turnoff_gap()?);
    }
    if s.product {
        let p = res.product_error()?;
        let mut scaled = p.scaled(1.0);
        scaled.name = format!("{}_normalized", p.name);
        curves.push(p);
        curves.push(scaled);
    }
    let mut a = Artifacts::default();
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for c in &curves {
        for (t, e) in c.times.iter().zip(&c.values) {
            rows.push(CurveRow { curve: &c.name, time: *t, value: e.value, stderr: e.se });
        }
        if c.times.len() >= MIN_FIT_POINTS {
            let f = rate_fit(c)?;
            fits.push((c, f));
        }
    }
    write_rows_to(&a.file(out, "llt_curves.csv"), &rows)?;
    let fit_rows: Vec<FitRow> = fits
        .iter()
        .map(|(c, f)| FitRow {
            curve: &c.name,
            slope: f.slope,
            intercept: f.intercept,
            slope_stderr: f.slope_se,
            ci_low: f.ci.0,
            ci_high: f.ci.1,
            method: format!("{:?}", f.method).to_lowercase(),
        })
        .collect();
    write_rows_to(&a.file(out, "llt_fits.csv"), &fit_rows)?;
    // The headline curve: the product error when computed, else the CLT error.
    let headline = if s.product { 1 + usize::from(s.turnoff) } else { 0 };
    let head = &curves[headline];
    match fits.iter().find(|(c, _)| c.name == head.name) {
        Some((_, f)) => a.checks.push(Check::new(
            &format!("{} decays", head.name),
            f.slope < 0.0,
            format!("slope {:.3} CI ({:.3}, {:.3})", f.slope, f.ci.0, f.ci.1),
        )),
        None => a.checks.push(Check::new(
            &format!("{} decays", head.name),
            head.strictly_decreasing(),
            format!("fewer than {MIN_FIT_POINTS} rungs; monotonicity only"),
        )),
    }
    Ok(a)
}
