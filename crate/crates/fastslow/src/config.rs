//! Run-configuration files: TOML documents with `[system]`, `[grid]`,
//! `[noise]` and `[experiment]` sections mirroring [`FastSlowConfig`] and
//! the benchmark registry. Unknown keys are hard errors so typos cannot
//! silently change an experiment.

use crate::error::{Error, Result};
use crate::fraccalc::AlphaParam;
use crate::noise::HurstParam;
use crate::rng::SeedSpec;
use crate::sde::FastSlowConfig;
use crate::systems::{self, BenchmarkSystem};
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub system: SystemSection,
    pub grid: GridSection,
    pub noise: NoiseSection,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// A registry name; the registry is compiled in.
    pub name: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub t_horizon: f64,
    pub n_steps: usize,
    /// Derived from the stability rule when absent.
    pub fast_substeps: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub hurst: f64,
    pub alpha: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub base_stream: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub epsilon: f64,
    /// Defaults to the `eps sqrt(-ln eps)` schedule when absent.
    pub delta: Option<f64>,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
}

fn default_paths() -> usize {
    200
}

/// Parses a config file; unknown keys are reported by name.
pub fn load(path: impl AsRef<Path>) -> Result<RunConfigFile> {
    let text = std::fs::read_to_string(&path)?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<RunConfigFile> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

impl RunConfigFile {
    /// Resolves the registry system and builds a validated solver config.
    pub fn realize(&self) -> Result<(FastSlowConfig, BenchmarkSystem)> {
        let system = systems::build(&self.system.name)?;
        let hurst = HurstParam::new(self.noise.hurst)?;
        let alpha = AlphaParam::new(self.noise.alpha)?;
        let fast_substeps = self.grid.fast_substeps.unwrap_or_else(|| {
            FastSlowConfig::required_fast_substeps(
                self.grid.t_horizon,
                self.grid.n_steps,
                self.experiment.epsilon,
                system.hyp.fast_lipschitz(),
            )
        });
        let delta = self
            .experiment
            .delta
            .unwrap_or_else(|| crate::harness::delta_schedule(self.experiment.epsilon));
        let cfg = FastSlowConfig {
            epsilon: self.experiment.epsilon,
            delta,
            t_end: self.grid.t_horizon,
            n_steps: self.grid.n_steps,
            fast_substeps,
            x0: self.experiment.x0.clone(),
            y0: self.experiment.y0.clone(),
            hurst,
            alpha,
            seed: SeedSpec::new(self.noise.master_seed, self.noise.base_stream),
        };
        cfg.validate(&system.hyp)?;
        Ok((cfg, system))
    }
}
