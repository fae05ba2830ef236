use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::DEFAULT_BREAKPOINTS;
use crate::controller::ControlConfig;
use crate::ddpg::DdpgConfig;
use crate::error::{Error, Result};
use crate::net_model::BehaviorParams;

/// One experiment: what to run it on, how to learn and where to write.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `parallel`, `single`, `sioux` or a scenario file path (relative paths
    /// resolve against the config file).
    pub scenario: String,
    /// Replaces the scenario's own behaviour parameters.
    pub behavior: Option<BehaviorParams>,
    pub convergence_eps: f64,
    pub max_convergence_days: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub centralized_breakpoints: usize,
    pub control: ControlConfig,
    pub ddpg: DdpgConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "parallel".into(),
            behavior: None,
            convergence_eps: 1e-3,
            max_convergence_days: 5000,
            seed: 0,
            output_dir: None,
            centralized_breakpoints: DEFAULT_BREAKPOINTS,
            control: ControlConfig::default(),
            ddpg: DdpgConfig::default(),
        }
    }
}

const BUILTIN: [&str; 3] = ["parallel", "single", "sioux"];

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.control.validate()?;
        self.ddpg.validate()?;
        if !(self.convergence_eps > 0.0) || self.max_convergence_days == 0 {
            return Err(Error::Config(
                "convergence_eps and max_convergence_days must be positive".into(),
            ));
        }
        if self.centralized_breakpoints < 2 {
            return Err(Error::Config("centralized_breakpoints must be at least 2".into()));
        }
        if !BUILTIN.contains(&self.scenario.as_str()) && !Path::new(&self.scenario).is_file() {
            return Err(Error::Config(format!("scenario file {} does not exist", self.scenario)));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if !BUILTIN.contains(&cfg.scenario.as_str()) {
            let p = Path::new(&cfg.scenario);
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.scenario = base.join(p).to_string_lossy().into_owned();
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}
