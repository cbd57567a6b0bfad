//! Flat `key = value` experiment configuration (TOML syntax, no tables).
//!
//! Every key is optional; omitted keys take the defaults below, which
//! reproduce the torus Monte Carlo setup.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use sard_core::estimators::Method;
use sard_core::sim::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,

    /// Domain CSV; when absent, a `grid_n × grid_n` unit torus is used.
    pub data: Option<PathBuf>,
    pub grid_n: usize,
    /// Reference resolution for simulated truth.
    pub fine_n: usize,
    pub tau: f64,

    pub alpha: f64,
    pub phi: f64,
    pub gamma_s: f64,
    pub gamma_a: f64,
    pub gamma_r: f64,
    pub gamma_d: f64,
    pub h_a: f64,
    pub h_r: f64,

    pub n_s: usize,
    pub radius_factor: f64,
    pub cfl: f64,
    pub max_dt: f64,

    pub estimators: Vec<String>,
    /// Highest contiguity order tried for the error weights.
    pub max_order: usize,
    /// First-order contiguity distance for non-lattice data; when absent,
    /// 1.5 times the mean nearest-neighbour distance.
    pub contiguity_distance: Option<f64>,
    /// Residual-bootstrap replications for standard errors; 0 disables.
    pub bootstrap: usize,

    pub mc_grids: Vec<usize>,
    pub mc_taus: Vec<f64>,

    pub h_a_grid: Vec<f64>,
    pub h_r_grid: Vec<f64>,

    pub particles: usize,
    pub particle_dt: f64,
    pub t_end: f64,

    /// Forecast horizon in time units.
    pub horizon: f64,
    pub forecast_step: f64,
    /// Decomposition horizon; in-sample (`tau`) when absent.
    pub decompose_horizon: Option<f64>,

    pub profile_points: usize,
    pub profile_bandwidth: Option<f64>,
    pub profile_bootstrap: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = ModelParams::monte_carlo_baseline();
        Self {
            seed: 1,
            output_dir: PathBuf::from("sard-out"),
            data: None,
            grid_n: 50,
            fine_n: 200,
            tau: 0.1,
            alpha: p.alpha,
            phi: p.phi,
            gamma_s: p.gamma_s,
            gamma_a: p.gamma_a,
            gamma_r: p.gamma_r,
            gamma_d: p.gamma_d,
            h_a: p.h_a,
            h_r: p.h_r,
            n_s: 8,
            radius_factor: sard_core::gfdm::DEFAULT_RADIUS_FACTOR,
            cfl: 0.2,
            max_dt: 0.01,
            estimators: Method::ALL.iter().map(|m| m.to_string()).collect(),
            max_order: 10,
            contiguity_distance: None,
            bootstrap: 500,
            mc_grids: vec![12, 20, 30, 40, 50],
            mc_taus: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            h_a_grid: vec![p.h_a],
            h_r_grid: vec![p.h_r],
            particles: 20_000,
            particle_dt: 0.002,
            t_end: 1.0,
            horizon: 50.0,
            forecast_step: 1.0,
            decompose_horizon: None,
            profile_points: 50,
            profile_bandwidth: None,
            profile_bootstrap: 200,
        }
    }
}

pub fn parse_method(s: &str) -> anyhow::Result<Method> {
    Ok(match s.to_ascii_uppercase().replace('_', "-").as_str() {
        "OLS-NAIVE" | "NAIVE" => Method::OlsNaive,
        "OLS" => Method::Ols,
        "IV" => Method::Iv,
        "ML" => Method::Ml,
        other => bail!("unknown estimator {other:?}"),
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.tau > 0.0) || self.mc_taus.iter().any(|t| !(*t > 0.0)) {
            bail!("tau must be positive");
        }
        if self.h_a_grid.is_empty() || self.h_r_grid.is_empty() {
            bail!("bandwidth grids must be nonempty");
        }
        if self.h_a_grid.iter().chain(&self.h_r_grid).any(|h| !(*h > 0.0)) {
            bail!("bandwidths must be positive");
        }
        if self.mc_grids.iter().any(|&n| n < 4) || self.grid_n < 4 {
            bail!("grids need at least 4 cells per side");
        }
        if !(self.horizon > 0.0 && self.forecast_step > 0.0) || self.decompose_horizon.is_some_and(|h| !(h > 0.0)) {
            bail!("horizons and steps must be positive");
        }
        if self.max_order == 0 {
            bail!("max_order must be at least 1");
        }
        self.methods()?;
        self.params().validate()?;
        Ok(())
    }

    pub fn methods(&self) -> anyhow::Result<Vec<Method>> {
        if self.estimators.is_empty() {
            bail!("no estimators selected");
        }
        self.estimators.iter().map(|s| parse_method(s)).collect()
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            alpha: self.alpha,
            phi: self.phi,
            gamma_s: self.gamma_s,
            gamma_a: self.gamma_a,
            gamma_r: self.gamma_r,
            gamma_d: self.gamma_d,
            h_a: self.h_a,
            h_r: self.h_r,
        }
    }

    pub fn gfdm(&self) -> sard_core::gfdm::GfdmOptions {
        sard_core::gfdm::GfdmOptions {
            n_s: self.n_s,
            radius_factor: self.radius_factor,
        }
    }

    pub fn integrate_options(&self) -> sard_core::sim::IntegrateOptions {
        sard_core::sim::IntegrateOptions {
            cfl: self.cfl,
            max_dt: self.max_dt,
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn roundtrip_and_overrides() {
        let c = ExperimentConfig::parse("seed = 9\nh_a_grid = [0.1, 0.15]\nestimators = [\"ml\"]\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.methods().unwrap(), vec![Method::Ml]);
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::parse("tau = 0.0").is_err());
        assert!(ExperimentConfig::parse("h_a_grid = []").is_err());
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
        assert!(ExperimentConfig::parse("gamma_d = -1.0").is_err());
    }
}
