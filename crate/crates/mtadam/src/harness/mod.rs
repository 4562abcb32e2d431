//! Experiment harness: configuration, deterministic training runs,
//! repeated-seed aggregation, the ablation suite, and the lambda search
//! glue. Emits per-step metrics as versioned CSV plus a JSON summary.

mod record;
mod runner;

pub use record::{RecordRow, RunRecord, CSV_SCHEMA_VERSION};
pub use runner::{
    mean_sd, run_ablation_suite, run_experiment, run_lambda_search, run_repeated, RepeatSummary,
    RunOutcome,
};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Activation;
use crate::optim::OptimizerConfig;

/// Config file format version accepted by [`apply_config_text`].
pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Mnist,
    Synthetic,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Mnist => "mnist",
            TaskKind::Synthetic => "synthetic",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(TaskKind::Mnist),
            "synthetic" => Ok(TaskKind::Synthetic),
            other => Err(Error::InvalidConfig(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    MtAdam,
    Adam,
    RmsProp,
    SgdMomentum,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::MtAdam => "mtadam",
            OptimizerKind::Adam => "adam",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::SgdMomentum => "sgd_momentum",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mtadam" => Ok(OptimizerKind::MtAdam),
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "sgd_momentum" => Ok(OptimizerKind::SgdMomentum),
            other => Err(Error::InvalidConfig(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// How the per-term loss weights are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingKind {
    /// All term weights 1.
    Balanced,
    /// Weights drawn once per run from uniform [1, 1000], seeded.
    Unbalanced,
    /// Caller-provided weights.
    Explicit(Vec<f64>),
}

impl fmt::Display for WeightingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightingKind::Balanced => f.write_str("balanced"),
            WeightingKind::Unbalanced => f.write_str("unbalanced"),
            WeightingKind::Explicit(w) => {
                let parts: Vec<String> = w.iter().map(|x| x.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl FromStr for WeightingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(WeightingKind::Balanced),
            "unbalanced" => Ok(WeightingKind::Unbalanced),
            list => {
                let weights: Result<Vec<f64>> = list
                    .split(',')
                    .map(|p| {
                        p.trim().parse::<f64>().map_err(|_| {
                            Error::InvalidConfig(format!("bad weight '{p}' in weighting list"))
                        })
                    })
                    .collect();
                Ok(WeightingKind::Explicit(weights?))
            }
        }
    }
}

/// Full description of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub optimizer: OptimizerKind,
    pub weighting: WeightingKind,
    pub epochs: usize,
    pub batch_size: usize,
    /// Master seed; the init/shuffle/weight streams derive from it unless
    /// overridden individually.
    pub seed: u64,
    pub init_seed: Option<u64>,
    pub shuffle_seed: Option<u64>,
    pub weight_seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub optim: OptimizerConfig,
    pub synthetic_terms: usize,
    pub synthetic_dims: usize,
    /// Steps per epoch for the synthetic task.
    pub synthetic_steps: usize,
    pub synthetic_condition: (f64, f64),
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskKind::Mnist,
            optimizer: OptimizerKind::MtAdam,
            weighting: WeightingKind::Unbalanced,
            epochs: 10,
            batch_size: 64,
            seed: 0,
            init_seed: None,
            shuffle_seed: None,
            weight_seed: None,
            data_dir: None,
            output_dir: None,
            hidden_sizes: vec![128, 64],
            activation: Activation::Relu,
            optim: OptimizerConfig::default(),
            synthetic_terms: 3,
            synthetic_dims: 10,
            synthetic_steps: 50,
            synthetic_condition: (1e-2, 1e2),
        }
    }
}

// Seed-stream tags for deriving independent sub-seeds from the master seed.
const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_WEIGHTS: u64 = 3;
const STREAM_TASK: u64 = 4;

/// splitmix64-style mix of (master, stream); changing one derived seed via
/// its override leaves the other streams' draws untouched.
pub(crate) fn derived_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ExperimentConfig {
    pub fn effective_init_seed(&self) -> u64 {
        self.init_seed
            .unwrap_or_else(|| derived_seed(self.seed, STREAM_INIT))
    }

    pub fn effective_shuffle_seed(&self) -> u64 {
        self.shuffle_seed
            .unwrap_or_else(|| derived_seed(self.seed, STREAM_SHUFFLE))
    }

    pub fn effective_weight_seed(&self) -> u64 {
        self.weight_seed
            .unwrap_or_else(|| derived_seed(self.seed, STREAM_WEIGHTS))
    }

    pub fn effective_task_seed(&self) -> u64 {
        derived_seed(self.seed, STREAM_TASK)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidConfig("zero hidden size".into()));
        }
        let num_terms = match self.task {
            TaskKind::Mnist => 10,
            TaskKind::Synthetic => self.synthetic_terms,
        };
        if let WeightingKind::Explicit(w) = &self.weighting {
            if w.len() != num_terms {
                return Err(Error::InvalidConfig(format!(
                    "{} explicit weights for {num_terms} terms",
                    w.len()
                )));
            }
            if w.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidConfig("weights must be positive".into()));
            }
        }
        if self.task == TaskKind::Synthetic {
            if self.synthetic_terms < 2 {
                return Err(Error::InvalidConfig("synthetic_terms must be >= 2".into()));
            }
            if self.synthetic_dims == 0 || self.synthetic_steps == 0 {
                return Err(Error::InvalidConfig(
                    "synthetic dims/steps must be positive".into(),
                ));
            }
        }
        self.optim.validate(num_terms)?;
        Ok(())
    }

    pub fn num_terms(&self) -> usize {
        match self.task {
            TaskKind::Mnist => 10,
            TaskKind::Synthetic => self.synthetic_terms,
        }
    }

    /// Applies one documented `key = value` setting.
    pub fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad_num = |k: &str, v: &str| Error::InvalidConfig(format!("bad value '{v}' for {k}"));
        match key {
            "config_version" => {
                let v: u32 = value.parse().map_err(|_| bad_num(key, value))?;
                if v != CONFIG_VERSION {
                    return Err(Error::InvalidConfig(format!(
                        "unsupported config_version {v} (supported: {CONFIG_VERSION})"
                    )));
                }
            }
            "task" => self.task = value.parse()?,
            "optimizer" => self.optimizer = value.parse()?,
            "variant" => self.optim.variant = value.parse()?,
            "weighting" => self.weighting = value.parse()?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad_num(key, value))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad_num(key, value))?,
            "seed" => self.seed = value.parse().map_err(|_| bad_num(key, value))?,
            "init_seed" => self.init_seed = Some(value.parse().map_err(|_| bad_num(key, value))?),
            "shuffle_seed" => {
                self.shuffle_seed = Some(value.parse().map_err(|_| bad_num(key, value))?)
            }
            "weight_seed" => {
                self.weight_seed = Some(value.parse().map_err(|_| bad_num(key, value))?)
            }
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "hidden_sizes" => {
                let sizes: std::result::Result<Vec<usize>, _> =
                    value.split(',').map(|p| p.trim().parse()).collect();
                self.hidden_sizes = sizes.map_err(|_| bad_num(key, value))?;
            }
            "activation" => self.activation = value.parse()?,
            "alpha" => self.optim.alpha = value.parse().map_err(|_| bad_num(key, value))?,
            "beta1" => self.optim.beta1 = value.parse().map_err(|_| bad_num(key, value))?,
            "beta2" => self.optim.beta2 = value.parse().map_err(|_| bad_num(key, value))?,
            "beta3" => self.optim.beta3 = value.parse().map_err(|_| bad_num(key, value))?,
            "eps" => self.optim.eps = value.parse().map_err(|_| bad_num(key, value))?,
            "eps_norm" => self.optim.eps_norm = value.parse().map_err(|_| bad_num(key, value))?,
            "anchor" => self.optim.anchor = value.parse().map_err(|_| bad_num(key, value))?,
            "smoothing" => {
                self.optim.smoothing = value.parse().map_err(|_| bad_num(key, value))?
            }
            "momentum" => self.optim.momentum = value.parse().map_err(|_| bad_num(key, value))?,
            "synthetic_terms" => {
                self.synthetic_terms = value.parse().map_err(|_| bad_num(key, value))?
            }
            "synthetic_dims" => {
                self.synthetic_dims = value.parse().map_err(|_| bad_num(key, value))?
            }
            "synthetic_steps" => {
                self.synthetic_steps = value.parse().map_err(|_| bad_num(key, value))?
            }
            "synthetic_condition" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(bad_num(key, value));
                }
                let lo: f64 = parts[0].parse().map_err(|_| bad_num(key, value))?;
                let hi: f64 = parts[1].parse().map_err(|_| bad_num(key, value))?;
                self.synthetic_condition = (lo, hi);
            }
            other => {
                return Err(Error::InvalidConfig(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Parses flat `key = value` config text (one setting per line, `#`
    /// comments). Unknown keys are rejected.
    pub fn apply_config_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            self.apply_key(key.trim(), value.trim())?;
        }
        self.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trip_and_unknown_keys() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_config_text(
            "# comment\n\
             config_version = 1\n\
             task = synthetic\n\
             optimizer = adam\n\
             weighting = 1,2,3\n\
             synthetic_terms = 3\n\
             epochs = 2\n\
             alpha = 0.01\n",
        )
        .unwrap();
        assert_eq!(cfg.task, TaskKind::Synthetic);
        assert_eq!(cfg.optimizer, OptimizerKind::Adam);
        assert_eq!(
            cfg.weighting,
            WeightingKind::Explicit(vec![1.0, 2.0, 3.0])
        );
        assert_eq!(cfg.optim.alpha, 0.01);

        let mut cfg = ExperimentConfig::default();
        let err = cfg.apply_config_text("no_such_key = 5\n").unwrap_err();
        assert!(err.to_string().contains("unknown config key"));

        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply_config_text("config_version = 2\n").is_err());
    }

    #[test]
    fn explicit_weights_must_match_term_count() {
        let mut cfg = ExperimentConfig::default();
        cfg.task = TaskKind::Mnist;
        cfg.weighting = WeightingKind::Explicit(vec![1.0; 9]);
        assert!(cfg.validate().is_err());
        cfg.weighting = WeightingKind::Explicit(vec![1.0; 10]);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn seed_streams_are_independent() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 5;
        let init = cfg.effective_init_seed();
        let shuffle = cfg.effective_shuffle_seed();
        let weights = cfg.effective_weight_seed();
        assert_ne!(init, shuffle);
        assert_ne!(shuffle, weights);
        // overriding one stream leaves the others alone
        cfg.weight_seed = Some(999);
        assert_eq!(cfg.effective_init_seed(), init);
        assert_eq!(cfg.effective_shuffle_seed(), shuffle);
        assert_eq!(cfg.effective_weight_seed(), 999);
    }
}
