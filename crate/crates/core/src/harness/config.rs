//! Declarative experiment configuration (TOML).
//!
//! Every field except `algorithm` and `tasks` has a default; see
//! `configs/*.toml` in the repository for annotated files.
//!
//! | key                             | default      |
//! |---------------------------------|--------------|
//! | `seed`                          | 1            |
//! | `runs`                          | 1            |
//! | `precision`                     | `"f64"`      |
//! | `population.clients`            | 1000         |
//! | `population.availability`       | 0.3          |
//! | `delay.shift` / `delay.scale`   | 1.0 / 2.0 (multiples of β) |
//! | `delay.speed_mix`               | 0.25 / 0.5 / 0.25 |
//! | `delay.multipliers`             | 1.3 / 1.0 / 0.7 |
//! | `server.history` (V)            | 8            |
//! | `server.c_period`               | `round(0.75·M·ΣR₀)` |
//! | `server.tau_max`                | unset        |
//! | `server.drop_stale`             | false        |
//! | `server.ratio_cap`              | 37           |
//! | `server.strict_ratio`           | false        |
//! | `server.reallocate_finished`    | true         |
//! | `server.first_k`                | 30 (0 disables) |
//! | `run.eval_interval`             | 1.0          |
//! | `run.stop_on_targets`           | true         |
//! | `run.max_sim_time` / `run.max_rounds` | unset  |
//! | task `l2`                       | 0            |
//! | task `base_beta`                | 1.0          |

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::delay_model::{DelayShape, SpeedMix, SpeedMultipliers};
use crate::error::{Error, Result};
use crate::event_engine::StopCondition;
use crate::fedast_server::DEFAULT_RATIO_CAP;
use crate::objectives::{ObjectiveKind, Target};
use crate::realloc::DEFAULT_HISTORY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "fedast_static")]
    FedAstStatic,
    #[serde(rename = "fedast_dynamic")]
    FedAstDynamic,
    #[serde(rename = "mm_sync")]
    MmSync,
    #[serde(rename = "no_buffer")]
    NoBuffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

fn default_seed() -> u64 {
    1
}
fn default_runs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub delay: DelayConfig,
    #[serde(default)]
    pub server: ServerSection,
    #[serde(default)]
    pub run: RunSection,
    pub tasks: Vec<TaskConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub clients: usize,
    pub availability: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self { clients: 1000, availability: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelayConfig {
    pub shift: f64,
    pub scale: f64,
    pub speed_mix: SpeedMix,
    pub multipliers: SpeedMultipliers,
}

impl Default for DelayConfig {
    fn default() -> Self {
        let shape = DelayShape::default();
        Self { shift: shape.shift, scale: shape.scale, speed_mix: SpeedMix::default(), multipliers: SpeedMultipliers::default() }
    }
}

impl DelayConfig {
    pub fn shape(&self) -> DelayShape {
        DelayShape { shift: self.shift, scale: self.scale }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerSection {
    pub history: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_period: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<u64>,
    pub drop_stale: bool,
    pub ratio_cap: f64,
    pub strict_ratio: bool,
    pub reallocate_finished: bool,
    /// Updates aggregated per task in each synchronous round; 0 waits for all.
    pub first_k: usize,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            history: DEFAULT_HISTORY,
            c_period: None,
            tau_max: None,
            drop_stale: false,
            ratio_cap: DEFAULT_RATIO_CAP,
            strict_ratio: false,
            reallocate_finished: true,
            first_k: crate::baselines::DEFAULT_FIRST_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub eval_interval: f64,
    pub stop_on_targets: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_sim_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<u64>,
    pub record_trace: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { eval_interval: 1.0, stop_on_targets: true, max_sim_time: None, max_rounds: None, record_trace: false }
    }
}

impl RunSection {
    pub fn stop_condition(&self) -> StopCondition {
        StopCondition { targets: self.stop_on_targets, max_sim_time: self.max_sim_time, max_rounds: self.max_rounds }
    }
}

/// Where a task's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Per-client quadratic targets around `center`, client spread `sigma_g`.
    QuadraticClients {
        #[serde(default = "one_f64")]
        center: f64,
        sigma_g: f64,
        #[serde(default)]
        sigma_local: f64,
        #[serde(default = "one_usize")]
        samples_per_client: usize,
    },
    /// Gaussian class blobs split across clients by a Dirichlet partition.
    Blobs {
        train_samples: usize,
        eval_samples: usize,
        #[serde(default = "one_f64")]
        separation: f64,
        #[serde(default = "one_f64")]
        noise: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    /// CSV files (`features…, label`), Dirichlet-partitioned.
    Csv {
        train: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eval: Option<PathBuf>,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
}

fn one_f64() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_alpha() -> f64 {
    0.1
}
fn default_beta() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub id: usize,
    pub objective: ObjectiveKind,
    pub data: DataConfig,
    pub tau: usize,
    pub eta_c: f64,
    pub eta_s: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub l2: f64,
    #[serde(default = "default_beta")]
    pub base_beta: f64,
    /// Initial active requests (asynchronous algorithms).
    pub r0: usize,
    /// Initial buffer size (asynchronous algorithms).
    pub b0: usize,
    /// Clients per round for the synchronous baseline; defaults to `r0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync_clients: Option<usize>,
    pub target: Target,
    /// Smoothness constant for the learning-rate check; computed when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // relative CSV paths are resolved against the config file
        if let Some(dir) = path.parent() {
            for t in &mut cfg.tasks {
                if let DataConfig::Csv { train, eval, .. } = &mut t.data {
                    if train.is_relative() {
                        *train = dir.join(&*train);
                    }
                    if let Some(e) = eval.as_mut().filter(|e| e.is_relative()) {
                        *e = dir.join(&*e);
                    }
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.runs == 0 {
            return err("runs must be >= 1".into());
        }
        if self.tasks.is_empty() {
            return err("at least one task is required".into());
        }
        if self.population.clients == 0 {
            return err("population.clients must be >= 1".into());
        }
        let p = self.population.availability;
        if !(p > 0.0 && p <= 1.0) {
            return err(format!("population.availability must be in (0, 1], got {p}"));
        }
        self.delay.speed_mix.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.delay.shape().validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.run.eval_interval > 0.0) {
            return err("run.eval_interval must be positive".into());
        }
        self.run.stop_condition().validate()?;
        if self.server.drop_stale && self.server.tau_max.is_none() {
            return err("server.drop_stale requires server.tau_max".into());
        }
        let mut ids = BTreeSet::new();
        for t in &self.tasks {
            if !ids.insert(t.id) {
                return err(format!("duplicate task id {}", t.id));
            }
            let ctx = |m: &str| Error::Config(format!("task {}: {m}", t.id));
            if t.tau == 0 || t.batch_size == 0 || t.r0 == 0 || t.b0 == 0 {
                return Err(ctx("tau, batch_size, r0 and b0 must be >= 1"));
            }
            if !(t.eta_c > 0.0 && t.eta_s > 0.0) {
                return Err(ctx("learning rates must be positive"));
            }
            if !(t.base_beta > 0.0) {
                return Err(ctx("base_beta must be positive"));
            }
            if t.sync_clients == Some(0) {
                return Err(ctx("sync_clients must be >= 1"));
            }
            match (&t.objective, &t.data) {
                (ObjectiveKind::Quadratic { .. }, DataConfig::QuadraticClients { sigma_g, sigma_local, samples_per_client, .. }) => {
                    if *sigma_g < 0.0 || *sigma_local < 0.0 || *samples_per_client == 0 {
                        return Err(ctx("quadratic data needs sigma >= 0 and samples_per_client >= 1"));
                    }
                }
                (ObjectiveKind::Quadratic { .. }, _) => return Err(ctx("quadratic objectives use quadratic_clients data")),
                (_, DataConfig::QuadraticClients { .. }) => return Err(ctx("classifiers need blobs or csv data")),
                (_, DataConfig::Blobs { train_samples, eval_samples, alpha, .. }) => {
                    if *train_samples == 0 || *eval_samples == 0 || !(*alpha > 0.0) {
                        return Err(ctx("blobs need samples > 0 and alpha > 0"));
                    }
                }
                (_, DataConfig::Csv { alpha, .. }) => {
                    if !(*alpha > 0.0) {
                        return Err(ctx("alpha must be positive"));
                    }
                }
            }
            if let ObjectiveKind::LogisticRegression { classes, .. } | ObjectiveKind::TinyMlp { classes, .. } = t.objective {
                if classes < 2 {
                    return Err(ctx("classifiers need at least 2 classes"));
                }
            }
            if t.objective.dim() == 0 {
                return Err(ctx("objective dimension must be positive"));
            }
        }
        Ok(())
    }

    /// Tasks in ascending id order, the order used everywhere at run time.
    pub fn sorted_tasks(&self) -> Vec<&TaskConfig> {
        let mut v: Vec<&TaskConfig> = self.tasks.iter().collect();
        v.sort_by_key(|t| t.id);
        v
    }
}
