//! Run configuration: a sectioned TOML file, every key optional.
//!
//! Defaults live here and nowhere else; `configs/schema.md` lists them.

use std::path::Path;

use kraichnan_core::covariance::{CovarianceSpec, Family};
use kraichnan_core::fieldsynth::Interpolation;
use kraichnan_core::grid::Grid;
use kraichnan_core::gridspde::default_time_step;
use kraichnan_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub covariance: CovarianceSection,
    pub grid: GridSection,
    pub run: RunSection,
    pub synth_check: SynthCheckSection,
    pub annealed: AnnealedSection,
    pub quenched: QuenchedSection,
    pub chi: ChiSection,
    pub corrector: CorrectorSection,
    pub moment_cross: MomentCrossSection,
    pub llt: LltSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceSection {
    pub dimension: usize,
    pub nu: f64,
    pub family: Family,
    pub sigma2: f64,
    pub corr_length: f64,
    /// Defaults to `4 corr_length`.
    pub support_radius: Option<f64>,
}

impl Default for CovarianceSection {
    fn default() -> Self {
        Self {
            dimension: 1,
            nu: 1.0,
            family: Family::IsotropicScalar,
            sigma2: 0.5,
            corr_length: 1.0,
            support_radius: None,
        }
    }
}

/// Both sizes default to the smallest grid that resolves the kernel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: Option<usize>,
    pub length: Option<f64>,
    /// Defaults to the solver's stable step for the grid.
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads; unset means `KRAICHNAN_WORKERS`, then all cores.
    pub workers: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 1, workers: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthCheckSection {
    pub draws: usize,
    /// Lags along the first axis, in grid nodes.
    pub lags: Vec<usize>,
    pub sigmas: f64,
    pub divergence_tol: f64,
}

impl Default for SynthCheckSection {
    fn default() -> Self {
        Self { draws: 10_000, lags: vec![0, 2, 4, 8], sigmas: 3.0, divergence_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealedSection {
    pub replicas: usize,
    pub particles: usize,
    pub time: f64,
    /// Fourier in d = 1, cubic above, when unset.
    pub interpolation: Option<Interpolation>,
    pub sigmas: f64,
    /// Also write replica 0's final positions.
    pub export_positions: bool,
}

impl Default for AnnealedSection {
    fn default() -> Self {
        Self { replicas: 100, particles: 10_000, time: 1.0, interpolation: None, sigmas: 3.0, export_positions: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuenchedSection {
    pub particles: usize,
    pub time: f64,
    /// Regularization time of the initial delta, in steps.
    pub t_reg_steps: f64,
    /// Kernel bandwidth in grid cells.
    pub bandwidth_cells: f64,
    /// Bulk is `|x| <= bulk_radius sqrt((nu + sigma2) t)`.
    pub bulk_radius: f64,
    pub budget_factor: f64,
    pub replica: u64,
}

impl Default for QuenchedSection {
    fn default() -> Self {
        Self {
            particles: 100_000,
            time: 2.0,
            t_reg_steps: 10.0,
            bandwidth_cells: 2.0,
            bulk_radius: 2.0,
            budget_factor: 3.0,
            replica: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChiSection {
    /// Stop when `sup |dS/dt|` falls below this.
    pub tol: f64,
    pub max_steps: u64,
    pub sup_tol: f64,
    /// Target residual ratio on grid doubling and its allowed deviation.
    pub residual_ratio: f64,
    pub residual_ratio_tol: f64,
    /// Convergence-rate run: times and its own separation grid.
    pub sm_times: Vec<f64>,
    pub sm_n: usize,
    pub sm_length: f64,
    pub sm_slope: f64,
    pub sm_slope_tol: f64,
    /// Envelope run from a Gaussian bump at the origin.
    pub bump_width: f64,
    pub envelope_times: Vec<f64>,
    /// Leading envelope times used to fit the constant.
    pub envelope_fit: usize,
    pub envelope_tol: f64,
}

impl Default for ChiSection {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_steps: 5_000_000,
            sup_tol: 0.01,
            residual_ratio: 4.0,
            residual_ratio_tol: 0.5,
            sm_times: vec![8.0, 16.0, 32.0, 64.0],
            sm_n: 512,
            sm_length: 128.0,
            sm_slope: -0.5,
            sm_slope_tol: 0.2,
            bump_width: 0.25,
            envelope_times: vec![1.0, 2.0, 4.0, 8.0],
            envelope_fit: 2,
            envelope_tol: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectorSection {
    pub replicas: usize,
    /// Defaults to `max(8 L^2 / (4 pi^2 nu), 10 l^2 / nu)`.
    pub burn_in: Option<f64>,
    pub time: f64,
    /// Separations along the first axis; must be grid nodes.
    pub separations: Vec<f64>,
    /// Time lags in units of `l^2 / nu`.
    pub lag_units: Vec<f64>,
    pub sigmas: f64,
}

impl Default for CorrectorSection {
    fn default() -> Self {
        Self {
            replicas: 200,
            burn_in: None,
            time: 0.0,
            separations: vec![0.0, 0.5, 1.0, 2.0, 6.0],
            lag_units: vec![0.0, 1.0, 2.0, 4.0, 8.0],
            sigmas: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentCrossSection {
    pub replicas: usize,
    pub pairs: usize,
    pub horizon: f64,
    pub z0: Vec<f64>,
    pub s0: f64,
    pub bin_cells: usize,
    pub interpolation: Option<Interpolation>,
}

impl Default for MomentCrossSection {
    fn default() -> Self {
        Self { replicas: 200, pairs: 500, horizon: 2.0, z0: vec![1.0], s0: 0.5, bin_cells: 4, interpolation: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LltSection {
    /// First rung; later rungs double.
    pub ladder_start: f64,
    pub ladder: usize,
    pub replicas: usize,
    /// Defaults to 2/3 in d = 1 and d / (d + 2) above.
    pub beta: Option<f64>,
    pub probe_multipliers: Vec<f64>,
    pub bulk_c: f64,
    pub t_reg_steps: f64,
    pub turnoff: bool,
    pub product: bool,
}

impl Default for LltSection {
    fn default() -> Self {
        Self {
            ladder_start: 8.0,
            ladder: 4,
            replicas: 100,
            beta: None,
            probe_multipliers: vec![0.0, 0.5, -0.5],
            bulk_c: 0.1,
            t_reg_steps: 10.0,
            turnoff: true,
            product: true,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn spec(&self) -> Result<CovarianceSpec> {
        let c = &self.covariance;
        let mut spec = CovarianceSpec::new(c.dimension, c.nu, c.family, c.sigma2, c.corr_length)?;
        if let Some(m) = c.support_radius {
            spec.support_radius = m;
            spec.validate()?;
        }
        Ok(spec)
    }

    pub fn grid(&self, spec: &CovarianceSpec) -> Result<Grid> {
        let auto = Grid::for_spec(spec)?;
        let grid = Grid::new(spec.dimension, self.grid.n.unwrap_or(auto.n), self.grid.length.unwrap_or(auto.length))?;
        grid.check_resolves(spec)?;
        Ok(grid)
    }

    pub fn dt(&self, spec: &CovarianceSpec, grid: &Grid) -> f64 {
        self.grid.dt.unwrap_or_else(|| default_time_step(spec, grid))
    }
}

/// `section.key=value`, with `value` in TOML syntax; bare words are strings.
fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key `{path}`")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, parents) = keys.split_last().expect("nonempty");
    let mut cur = table;
    for k in parents {
        cur = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{k}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = Config::load(None, &[]).unwrap();
        assert_eq!(c, Config::default());
        let spec = c.spec().unwrap();
        assert_eq!(spec.support_radius, 4.0);
        assert_eq!(c.grid(&spec).unwrap().n, 128);
    }

    #[test]
    fn overrides_take_toml_values() {
        let c = Config::load(
            None,
            &["run.seed=9".into(), "covariance.family=incompressible".into(), "llt.probe_multipliers=[0.0]".into()],
        )
        .unwrap();
        assert_eq!(c.run.seed, 9);
        assert_eq!(c.covariance.family, Family::Incompressible);
        assert_eq!(c.llt.probe_multipliers, vec![0.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::load(None, &["annealed.particle=3".into()]).is_err());
        assert!(Config::load(None, &["nosuch.key=3".into()]).is_err());
    }
}
