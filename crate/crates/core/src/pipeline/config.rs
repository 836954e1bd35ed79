//! Experiment configuration: one TOML file, with defaults for every field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineReward, SofaLacCoeffs};
use crate::cohort::SynthConfig;
use crate::error::{Error, Result};
use crate::evaluation::forest::ForestConfig;
use crate::offline_rl::RlConfig;
use crate::preference::PrefTrainConfig;

pub const ENV_OUTPUT_DIR: &str = "CNPR_OUTPUT_DIR";
pub const ENV_THREADS: &str = "CNPR_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSource {
    /// JSON-lines cohort file; when absent a synthetic cohort is generated.
    pub path: Option<PathBuf>,
    pub synthetic: SynthConfig,
}

impl Default for CohortSource {
    fn default() -> Self {
        Self {
            path: None,
            synthetic: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub mortality_r: f64,
    pub sofa_lac: SofaLacCoeffs,
    pub news2_r_die: f64,
    pub news2_r_survive: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            mortality_r: 15.0,
            sofa_lac: SofaLacCoeffs::default(),
            news2_r_die: -1.0,
            news2_r_survive: 0.0,
        }
    }
}

impl BaselineConfig {
    /// Baseline formulations in reporting order.
    pub fn rewards(&self) -> [BaselineReward; 3] {
        [
            BaselineReward::SofaLac(self.sofa_lac),
            BaselineReward::Mortality { r: self.mortality_r },
            BaselineReward::News2 {
                r_die: self.news2_r_die,
                r_survive: self.news2_r_survive,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Bootstrap resamples for the effect-size interval.
    pub n_boot: usize,
    pub feature_importance: bool,
    pub forest: ForestConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_boot: 1000,
            feature_importance: true,
            forest: ForestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed; every stage derives its named substreams from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads for parallel sections; `None` uses all cores.
    pub threads: Option<usize>,
    pub train_frac: f64,
    /// Drop the variables missing from the external-validation feature set.
    pub reduced_features: bool,
    pub cohort: CohortSource,
    pub reward: PrefTrainConfig,
    pub rl: RlConfig,
    pub baselines: BaselineConfig,
    pub evaluation: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("runs/default"),
            threads: None,
            train_frac: 0.8,
            reduced_features: false,
            cohort: CohortSource::default(),
            reward: PrefTrainConfig::default(),
            rl: RlConfig::default(),
            baselines: BaselineConfig::default(),
            evaluation: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Apply `CNPR_OUTPUT_DIR` and `CNPR_THREADS` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
        if let Ok(t) = std::env::var(ENV_THREADS) {
            if !t.is_empty() {
                let n: usize = t
                    .parse()
                    .map_err(|_| Error::Config(format!("{ENV_THREADS} must be a positive integer, got `{t}`")))?;
                self.threads = Some(n);
            }
        }
        Ok(())
    }

    /// Propagate the global seed and feature flag into the stage configs and validate.
    pub fn resolve(mut self) -> Result<Self> {
        self.reward.seed = self.seed;
        self.rl.seed = self.seed;
        self.cohort.synthetic.reduced_features |= self.reduced_features;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!("train_frac must lie in (0, 1), got {}", self.train_frac)));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        if self.evaluation.n_boot == 0 {
            return Err(Error::Config("evaluation.n_boot must be positive".into()));
        }
        if self.cohort.path.is_none() {
            self.cohort.synthetic.validate()?;
        }
        self.reward.validate()?;
        self.rl.validate()?;
        self.evaluation.forest.validate()
    }
}
