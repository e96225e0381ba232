//! JSON run configuration and its merge with environment and flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use kfc_core::experiments::{default_beta_grid, ExperimentSpec, APPLICATION_MODELS, DEFAULT_RUNS, PAPER_PARITY_RUNS};
use kfc_core::models::{system, SystemModel, REGISTRY_NAMES};
use kfc_core::moments::{Ekf2Mode, EstimatorConfig, DEFAULT_ALPHA};

pub const SEED_ENV: &str = "KFC_SEED";

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Contents of the `--config` file. Every key is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// A registry system name, or `"all"` for every application model.
    pub model: Option<String>,
    pub estimators: Option<Vec<EstimatorConfig>>,
    pub beta_grid: Option<Vec<f64>>,
    pub runs: Option<usize>,
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub recalibrate: Option<bool>,
    pub backout: Option<bool>,
    pub paper_parity: Option<bool>,
    /// Replaces the model's measurement noise standard deviation.
    pub measurement_std: Option<f64>,
    /// Scalar demo: Jacobian fluctuation half-widths.
    pub gamma: Option<Vec<f64>>,
    /// Diagnose: estimators whose compensation must stay PSD.
    pub psd_estimators: Option<Vec<EstimatorConfig>>,
    pub psd_trials: Option<usize>,
    pub psd_max_degree: Option<u32>,
    /// Diagnose: Monte-Carlo draws for the sphere-bound and β scans.
    pub draws: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }
}

/// Values given on the command line; `None` means "not given".
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub jobs: Option<usize>,
    pub paper_parity: bool,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Diagnose,
    Sweep,
    DemoScalar,
    App,
}

/// Fully merged and validated settings.
#[derive(Clone, Debug)]
pub struct Settings {
    pub command: Command,
    pub models: Vec<String>,
    pub estimators: Vec<EstimatorConfig>,
    pub beta_grid: Vec<f64>,
    pub runs: usize,
    pub horizon: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub recalibrate: bool,
    pub backout: bool,
    pub measurement_std: Option<f64>,
    pub gamma: Vec<f64>,
    pub psd_estimators: Vec<EstimatorConfig>,
    pub psd_trials: usize,
    pub psd_max_degree: u32,
    pub draws: usize,
    pub jobs: Option<usize>,
}

pub fn default_estimators() -> Vec<EstimatorConfig> {
    vec![
        EstimatorConfig::ekf(),
        EstimatorConfig::ekf2(1.0, Ekf2Mode::Gaussian),
        EstimatorConfig::skf(1.0),
        EstimatorConfig::ckf(1.0),
        EstimatorConfig::sskf(1.0, DEFAULT_ALPHA),
    ]
}

fn parse_env_seed(raw: Option<String>) -> Result<Option<u64>, ConfigError> {
    match raw {
        None => Ok(None),
        Some(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| bad(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
    }
}

impl Settings {
    /// Precedence is config < environment < flag.
    pub fn resolve(
        command: Command,
        cfg: RunConfig,
        env_seed: Option<String>,
        flags: Overrides,
    ) -> Result<Self, ConfigError> {
        let seed = flags.seed.or(parse_env_seed(env_seed)?).or(cfg.seed).unwrap_or(0);
        let parity = flags.paper_parity || cfg.paper_parity.unwrap_or(false);
        let runs = flags
            .runs
            .or(parity.then_some(PAPER_PARITY_RUNS))
            .or(cfg.runs)
            .unwrap_or(DEFAULT_RUNS);
        let default_model = match command {
            Command::Sweep => "all",
            Command::DemoScalar => "scalar_demo",
            _ => "terrain_nav",
        };
        let model = cfg.model.unwrap_or_else(|| default_model.to_string());
        let models = if model == "all" {
            APPLICATION_MODELS.iter().map(|s| s.to_string()).collect()
        } else {
            vec![model]
        };
        let default_grid = match command {
            Command::DemoScalar => vec![0.0, 1.0, 10.0],
            _ => default_beta_grid(),
        };
        let s = Settings {
            command,
            models,
            estimators: cfg.estimators.unwrap_or_else(default_estimators),
            beta_grid: cfg.beta_grid.unwrap_or(default_grid),
            runs,
            horizon: cfg.horizon,
            seed,
            out: flags.out.or(cfg.out).unwrap_or_else(|| PathBuf::from("kfc_out")),
            recalibrate: cfg.recalibrate.unwrap_or(true),
            backout: cfg.backout.unwrap_or(true),
            measurement_std: cfg.measurement_std,
            gamma: cfg.gamma.unwrap_or_else(|| vec![0.0, 0.5]),
            psd_estimators: cfg.psd_estimators.unwrap_or_else(|| vec![EstimatorConfig::ckf(0.0)]),
            psd_trials: cfg.psd_trials.unwrap_or(1000),
            psd_max_degree: cfg.psd_max_degree.unwrap_or(2),
            draws: cfg.draws.unwrap_or(200_000),
            jobs: flags.jobs,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.runs == 0 {
            return Err(bad("runs must be at least 1"));
        }
        if self.horizon == Some(0) {
            return Err(bad("horizon must be at least 1"));
        }
        if self.jobs == Some(0) {
            return Err(bad("jobs must be at least 1"));
        }
        if self.beta_grid.is_empty() {
            return Err(bad("beta_grid is empty"));
        }
        if let Some(std) = self.measurement_std {
            if !(std.is_finite() && std > 0.0) {
                return Err(bad(format!("measurement_std must be positive, got {std}")));
            }
        }
        match self.command {
            Command::DemoScalar => {
                for &g in &self.gamma {
                    if !(0.0..1.0).contains(&g) {
                        return Err(bad(format!("gamma must lie in [0, 1), got {g}")));
                    }
                }
                for &b in &self.beta_grid {
                    if !(b.is_finite() && b >= 0.0) {
                        return Err(bad(format!("beta must be non-negative for the scalar demo, got {b}")));
                    }
                }
            }
            Command::Diagnose => {
                if self.psd_trials == 0 || self.draws == 0 {
                    return Err(bad("psd_trials and draws must be at least 1"));
                }
                if !(1..=3).contains(&self.psd_max_degree) {
                    return Err(bad("psd_max_degree must be 1, 2 or 3"));
                }
                for e in &self.psd_estimators {
                    e.validate().map_err(|e| bad(e.to_string()))?;
                }
            }
            Command::Sweep | Command::App => {
                for m in &self.models {
                    if !REGISTRY_NAMES.contains(&m.as_str()) {
                        return Err(bad(format!("unknown model `{m}`")));
                    }
                    system(m).map_err(|e| bad(e.to_string()))?;
                    self.spec(m).validate().map_err(|e| bad(e.to_string()))?;
                }
                if self.command == Command::App {
                    for e in &self.estimators {
                        e.validate().map_err(|e| bad(e.to_string()))?;
                    }
                }
            }
        }
        if self.out.exists() && !self.out.is_dir() {
            return Err(bad(format!("output path {} is not a directory", self.out.display())));
        }
        Ok(())
    }

    pub fn spec(&self, model: &str) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(model, self.estimators.clone(), self.runs, self.seed);
        spec.beta_grid = if self.command == Command::App {
            Vec::new()
        } else {
            self.beta_grid.clone()
        };
        spec.horizon = self.horizon;
        spec.recalibrate = self.recalibrate;
        spec.backout = self.backout;
        spec
    }

    /// Registry system with the configured overrides applied.
    pub fn system(&self, model: &str) -> kfc_core::Result<SystemModel> {
        let mut s = system(model)?;
        if let Some(std) = self.measurement_std {
            s = s.with_measurement_std(std)?;
        }
        Ok(s)
    }
}
