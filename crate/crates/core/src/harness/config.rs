use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::canonical::{AlgoParams, Algorithm, ParamOverrides};
use crate::diffusion::{GaussianMixturePrior, GmmScore, PriorFile, ScheduleSpec};
use crate::lle::TrainConfig;
use crate::numerics::DEFAULT_PEAK;
use crate::operators::{ObservationOp, OperatorSpec};
use crate::{Error, Result};

/// Where the prior comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    /// JSON prior file, relative to the config file.
    File(PathBuf),
    Inline(PriorFile),
    Random {
        dim: usize,
        components: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub operator: OperatorSpec,
    pub sigma_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub train: u64,
    pub test: u64,
}

/// One experiment: prior, task, solver, grid and optional LLE training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub prior: PriorSource,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    pub task: TaskSpec,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub params: ParamOverrides,
    pub steps: usize,
    /// `"none"` (or absent) disables training; LLE then uses identity
    /// coefficients.
    #[serde(default, deserialize_with = "de_lle", serialize_with = "ser_lle")]
    pub lle: Option<TrainConfig>,
    #[serde(default)]
    pub seeds: Seeds,
    pub n_test: usize,
    #[serde(default = "default_peak")]
    pub peak: f64,
}

fn default_peak() -> f64 {
    DEFAULT_PEAK
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LleField {
    Word(String),
    Config(Box<TrainConfig>),
}

fn de_lle<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<TrainConfig>, D::Error> {
    match Option::<LleField>::deserialize(d)? {
        None => Ok(None),
        Some(LleField::Word(w)) if w == "none" => Ok(None),
        Some(LleField::Word(w)) => Err(serde::de::Error::custom(format!(
            "lle must be \"none\" or an object, got \"{w}\""
        ))),
        Some(LleField::Config(c)) => Ok(Some(*c)),
    }
}

fn ser_lle<S: Serializer>(v: &Option<TrainConfig>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        None => s.serialize_str("none"),
        Some(c) => c.serialize(s),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks the invariants; relative paths resolve against `base_dir`.
    pub fn validate(&self, base_dir: &Path) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.n_test == 0 {
            return Err(Error::Config("n_test must be at least 1".into()));
        }
        if !(self.task.sigma_y.is_finite() && self.task.sigma_y >= 0.0) {
            return Err(Error::Config(format!(
                "sigma_y = {} must be non-negative",
                self.task.sigma_y
            )));
        }
        if !(self.peak.is_finite() && self.peak > 0.0) {
            return Err(Error::Config(format!("peak = {} must be positive", self.peak)));
        }
        if let PriorSource::File(p) = &self.prior {
            let full = base_dir.join(p);
            if !full.is_file() {
                return Err(Error::Config(format!("prior file {} does not exist", full.display())));
            }
        }
        if let Some(t) = &self.lle {
            t.validate()?;
        }
        self.algo_params()?;
        Ok(())
    }

    pub fn algo_params(&self) -> Result<AlgoParams> {
        AlgoParams::defaults(self.algorithm).with_overrides(&self.params)
    }
}

/// A validated config with its prior, model and operator built.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: GmmScore,
    pub op: ObservationOp,
    pub params: AlgoParams,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, base_dir: &Path) -> Result<Self> {
        config.validate(base_dir)?;
        let prior = match &config.prior {
            PriorSource::File(p) => GaussianMixturePrior::load(base_dir.join(p))?,
            PriorSource::Inline(f) => GaussianMixturePrior::from_file(f)?,
            PriorSource::Random { dim, components, seed } => GaussianMixturePrior::random(*dim, *components, *seed)?,
        };
        let op = config.task.operator.build(prior.dim())?;
        let model = GmmScore::new(prior, config.schedule.build()?);
        let params = config.algo_params()?;
        Ok(Self {
            config,
            model,
            op,
            params,
        })
    }

    /// Reads a JSON config; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let config = ExperimentConfig::from_json(&std::fs::read_to_string(path)?)?;
        Self::new(config, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn dim(&self) -> usize {
        self.model.prior().dim()
    }

    /// Training configuration with the experiment's train seed; untrained
    /// defaults when LLE is disabled.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.config.lle.clone().unwrap_or_default();
        t.base_seed = self.config.seeds.train;
        t
    }
}
