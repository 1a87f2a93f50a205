mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use kraichnan_core::io::{write_json, write_rows_to};
use kraichnan_core::{Error, ErrorClass, Result};
use serde::{Deserialize, Serialize};

use commands::{Artifacts, Check};
use config::Config;

/// Environment variable read for the default worker count.
const WORKERS_ENV: &str = "KRAICHNAN_WORKERS";

/// Exit status for a run whose checks did not all pass.
const EXIT_CHECK_FAILED: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "kraichnan", version, about = "Passive scalar transport experiments in a white-in-time Gaussian flow")]
struct Cli {
    #[command(subcommand)]
    command: Top,
}

#[derive(Subcommand, Debug)]
enum Top {
    /// Run one experiment.
    Run {
        #[command(subcommand)]
        experiment: Experiment,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides `run.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (overrides `run.workers` and KRAICHNAN_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory receiving `<experiment>/` output folders.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Number of dyadic rungs for `llt` (overrides `llt.ladder`).
    #[arg(long, global = true)]
    ladder: Option<usize>,
    /// Override any schema key, e.g. `--set annealed.replicas=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Experiment {
    /// Increment covariance and divergence of synthesized fields.
    SynthCheck,
    /// Annealed displacement covariance of particle clouds.
    Annealed,
    /// Quenched density: grid solver against a particle KDE.
    Quenched,
    /// Invariant separation density, convergence rate and Gaussian envelope.
    Chi,
    /// Two-point and time correlations of the stationary corrector.
    Corrector,
    /// Monte Carlo separation law against the separation PDE.
    MomentCross,
    /// Local limit ladder: turn-off and product errors with rate fits.
    Llt,
    /// Summarize every manifest under the output directory.
    Report,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::SynthCheck => "synth-check",
            Experiment::Annealed => "annealed",
            Experiment::Quenched => "quenched",
            Experiment::Chi => "chi",
            Experiment::Corrector => "corrector",
            Experiment::MomentCross => "moment-cross",
            Experiment::Llt => "llt",
            Experiment::Report => "report",
        }
    }
}

/// Everything needed to reproduce and audit one run.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    subcommand: String,
    version: String,
    master_seed: u64,
    workers: usize,
    config: Config,
    outputs: Vec<String>,
    checks: Vec<Check>,
    wall_seconds: f64,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Resolution => 3,
        ErrorClass::Stability => 4,
        ErrorClass::Replicas => 5,
        ErrorClass::Numerical => 6,
        ErrorClass::Io => 7,
    }
}

fn resolve_workers(cli: Option<usize>, cfg: Option<usize>) -> Result<usize> {
    if let Some(w) = cli.or(cfg) {
        return Ok(w);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::Config(format!("{WORKERS_ENV}={v} is not a count"))),
        Err(_) => Ok(0),
    }
}

fn run(experiment: Experiment, common: &Common) -> Result<bool> {
    if experiment == Experiment::Report {
        return report(&common.out_dir);
    }
    let mut cfg = Config::load(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(n) = common.ladder {
        cfg.llt.ladder = n;
    }
    let workers = resolve_workers(common.workers, cfg.run.workers)?;
    cfg.run.workers = Some(workers);
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let workers = rayon::current_num_threads();

    let out = common.out_dir.join(experiment.name());
    std::fs::create_dir_all(&out)?;
    let start = Instant::now();
    let artifacts: Artifacts = match experiment {
        Experiment::SynthCheck => commands::synth_check(&cfg, &out)?,
        Experiment::Annealed => commands::annealed(&cfg, &out)?,
        Experiment::Quenched => commands::quenched(&cfg, &out)?,
        Experiment::Chi => commands::chi(&cfg, &out)?,
        Experiment::Corrector => commands::corrector(&cfg, &out)?,
        Experiment::MomentCross => commands::moment_cross(&cfg, &out)?,
        Experiment::Llt => commands::llt(&cfg, &out)?,
        Experiment::Report => unreachable!("handled above"),
    };
    let wall_seconds = start.elapsed().as_secs_f64();
    for c in &artifacts.checks {
        println!("{}  {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let ok = artifacts.checks.iter().all(|c| c.pass);
    let manifest = RunManifest {
        subcommand: experiment.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.run.seed,
        workers,
        config: cfg,
        outputs: artifacts.outputs,
        checks: artifacts.checks,
        wall_seconds,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    println!("wrote {} ({wall_seconds:.1}s)", out.display());
    Ok(ok)
}

#[derive(Serialize)]
struct ReportRow {
    subcommand: String,
    seed: u64,
    check: String,
    pass: bool,
    detail: String,
    wall_seconds: f64,
}

fn report(out_dir: &Path) -> Result<bool> {
    let mut manifests = Vec::new();
    let entries = std::fs::read_dir(out_dir)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", out_dir.display())))?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    dirs.sort();
    for dir in dirs {
        let path = dir.join("manifest.json");
        if path.is_file() {
            let m: RunManifest = serde_json::from_reader(std::fs::File::open(&path)?)?;
            manifests.push(m);
        }
    }
    if manifests.is_empty() {
        return Err(Error::Config(format!("no manifests under {}", out_dir.display())));
    }
    let mut rows = Vec::new();
    for m in &manifests {
        for c in &m.checks {
            rows.push(ReportRow {
                subcommand: m.subcommand.clone(),
                seed: m.master_seed,
                check: c.name.clone(),
                pass: c.pass,
                detail: c.detail.clone(),
                wall_seconds: m.wall_seconds,
            });
        }
    }
    let width = rows.iter().map(|r| r.subcommand.len() + r.check.len() + 2).max().unwrap_or(0);
    for r in &rows {
        let label = format!("{}: {}", r.subcommand, r.check);
        println!("{}  {label:<width$}  {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
    }
    write_rows_to(&out_dir.join("report.csv"), &rows)?;
    Ok(rows.iter().all(|r| r.pass))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let Top::Run { experiment, common } = cli.command;
    match run(experiment, &common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
