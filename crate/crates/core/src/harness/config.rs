//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 0
//! data_seed = 0
//! precision = 64
//!
//! [model]
//! family = "tiny_transformer"
//! depth = 1
//! width = 128
//! vocab = 64
//! context = 64
//!
//! [data]
//! kind = "markov"
//! vocab = 64
//! order = 2
//! length = 1000000
//!
//! [optimizer]
//! kind = "muon_nsgd"
//! peak_lr = 0.01
//!
//! [schedule]
//! kind = "wsd"
//! warmup_frac = 0.02
//! decay_frac = 0.1
//!
//! [training]
//! steps = 20000
//! batch_size = 8192
//! seq_len = 64
//!
//! [[events]]
//! step = 10000
//! target_depth = 6
//! method = "random"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::DataSpec;
use super::HarnessError;
use crate::expansion::{ExpansionMethod, InsertionSite, OptimizerStatePolicy};
use crate::model::{Family, ModelConfig};
use crate::optim::{OptimizerConfig, ScheduleConfig, ScheduleKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl TryFrom<u32> for Precision {
    type Error = String;
    fn try_from(bits: u32) -> Result<Self, String> {
        match bits {
            32 => Ok(Precision::F32),
            64 => Ok(Precision::F64),
            other => Err(format!("precision must be 32 or 64, got {other}")),
        }
    }
}

impl From<Precision> for u32 {
    fn from(p: Precision) -> u32 {
        match p {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

fn default_warmup() -> f64 {
    0.02
}
fn default_decay() -> f64 {
    0.2
}

/// Schedule shape; the peak comes from the optimizer and the horizon from `training.steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    #[serde(default = "default_warmup")]
    pub warmup_frac: f64,
    #[serde(default = "default_decay")]
    pub decay_frac: f64,
}

fn default_seq_len() -> usize {
    64
}
fn default_eval_interval() -> u64 {
    100
}
fn default_eval_batches() -> usize {
    4
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    /// Horizon `T` of the schedule.
    pub steps: u64,
    /// Tokens (language data) or samples (regression) per step.
    pub batch_size: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: u64,
    #[serde(default = "default_eval_batches")]
    pub eval_batches: usize,
    /// Tokens/samples per validation batch; defaults to `batch_size`.
    #[serde(default)]
    pub eval_batch_size: Option<usize>,
    /// Stop after this many steps while keeping the schedule of length `steps`
    /// (pilot runs that are early-stopped once losses mix).
    #[serde(default)]
    pub pilot_horizon: Option<u64>,
    #[serde(default = "default_true")]
    pub checkpoint_events: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventConfig {
    pub step: u64,
    pub target_depth: usize,
    #[serde(default = "default_method")]
    pub method: ExpansionMethod,
    #[serde(default)]
    pub site: InsertionSite,
    #[serde(default)]
    pub os_policy: OptimizerStatePolicy,
    /// New batch size from this step on.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Seed for new-block initialization; derived from the run seed if absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_method() -> ExpansionMethod {
    ExpansionMethod::Random
}

fn default_epsilon() -> f64 {
    0.01
}
fn default_window() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_window")]
    pub window: usize,
}

impl Default for MixingConfig {
    fn default() -> Self {
        MixingConfig {
            epsilon: default_epsilon(),
            window: default_window(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Drives model initialization, batch sampling and expansion seeds. The
    /// `model.seed` field is overwritten by it.
    #[serde(default)]
    pub seed: u64,
    /// Drives dataset generation, so runs with different seeds share data.
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub data: DataSpec,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleSection,
    pub training: TrainingSection,
    #[serde(default)]
    pub events: Vec<EventConfig>,
    #[serde(default)]
    pub mixing: MixingConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            kind: self.schedule.kind,
            peak_lr: self.optimizer.peak_lr,
            warmup_frac: self.schedule.warmup_frac,
            decay_frac: self.schedule.decay_frac,
            horizon: self.training.steps,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.clone().with_seed(self.seed)
    }

    pub fn warmup_end(&self) -> u64 {
        (self.schedule.warmup_frac * self.training.steps as f64).round() as u64
    }

    /// Last step of the constant phase (`T` for cosine/constant shapes without decay).
    pub fn stable_end(&self) -> u64 {
        match self.schedule.kind {
            ScheduleKind::Wsd => {
                self.training.steps - (self.schedule.decay_frac * self.training.steps as f64).round() as u64
            }
            ScheduleKind::Constant => self.training.steps,
            ScheduleKind::Cosine => self.warmup_end(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.model.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.optimizer.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.schedule().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let t = &self.training;
        if t.batch_size == 0 || t.eval_interval == 0 || t.eval_batches == 0 {
            return bad("batch_size, eval_interval and eval_batches must be positive".into());
        }
        match (&self.data, self.model.family) {
            (DataSpec::Markov { vocab, .. }, Family::TinyTransformer) if *vocab > self.model.vocab => {
                return bad(format!("data vocab {vocab} exceeds model vocab {}", self.model.vocab));
            }
            (DataSpec::ByteLm { .. }, Family::TinyTransformer) if self.model.vocab < 256 => {
                return bad("byte-level data needs model vocab >= 256".into());
            }
            (DataSpec::MlpRegression { input_dim, output_dim, .. }, Family::ResidualMlp)
                if *input_dim != self.model.input_dim || *output_dim != self.model.output_dim =>
            {
                return bad("regression dims do not match the model".into());
            }
            (DataSpec::MlpRegression { .. }, Family::TinyTransformer)
            | (DataSpec::Markov { .. } | DataSpec::ByteLm { .. }, Family::ResidualMlp) => {
                return bad("data kind does not match the model family".into());
            }
            _ => {}
        }
        if self.model.family == Family::TinyTransformer {
            if t.seq_len == 0 || t.seq_len > self.model.context {
                return bad(format!("seq_len {} must be in 1..={}", t.seq_len, self.model.context));
            }
            let sizes = std::iter::once(t.batch_size).chain(self.events.iter().filter_map(|e| e.batch_size));
            for b in sizes {
                if b % t.seq_len != 0 {
                    return bad(format!("batch size {b} is not a multiple of seq_len {}", t.seq_len));
                }
            }
        }
        let mut depth = self.model.depth;
        let mut last: Option<u64> = None;
        for e in &self.events {
            if last.is_some_and(|l| e.step <= l) {
                return bad("expansion events must have strictly increasing steps".into());
            }
            if e.step >= t.steps {
                return bad(format!("event step {} is not before the horizon {}", e.step, t.steps));
            }
            if e.target_depth < depth {
                return bad(format!("event at {} shrinks depth {depth} -> {}", e.step, e.target_depth));
            }
            if e.method.copies() && depth == 0 {
                return bad(format!("{:?} needs a source depth of at least 1", e.method));
            }
            if e.batch_size == Some(0) {
                return bad("event batch_size must be positive".into());
            }
            depth = e.target_depth;
            last = Some(e.step);
        }
        if !(self.mixing.epsilon > 0.0) || self.mixing.window == 0 {
            return bad("mixing epsilon and window must be positive".into());
        }
        Ok(())
    }

    /// Expansion steps outside the constant-learning-rate phase.
    pub fn warnings(&self) -> Vec<String> {
        let (lo, hi) = (self.warmup_end(), self.stable_end());
        self.events
            .iter()
            .filter(|e| e.step < lo || e.step > hi)
            .map(|e| {
                format!(
                    "expansion at step {} lies outside the stable phase [{lo}, {hi}]; expanding during the stable phase is recommended",
                    e.step
                )
            })
            .collect()
    }

    /// Model configuration after all events.
    pub fn final_model_config(&self) -> ModelConfig {
        let depth = self.events.last().map_or(self.model.depth, |e| e.target_depth);
        self.model_config().with_depth(depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
seed = 3
[model]
family = "tiny_transformer"
depth = 1
width = 32
vocab = 16
context = 16

[data]
kind = "markov"
vocab = 16
length = 4000

[optimizer]
kind = "muon_nsgd"
peak_lr = 0.01

[schedule]
kind = "wsd"
decay_frac = 0.1

[training]
steps = 100
batch_size = 64
seq_len = 16

[[events]]
step = 50
target_depth = 3
"#;

    #[test]
    fn parses_and_fills_defaults() {
        let c = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(c.events[0].method, ExpansionMethod::Random);
        assert_eq!(c.events[0].site, InsertionSite::Bottom);
        assert_eq!(c.precision, Precision::F64);
        assert_eq!(c.schedule().horizon, 100);
        assert_eq!(c.stable_end(), 90);
        assert!(c.warnings().is_empty());
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_bad_events() {
        let shrink = SAMPLE.replace("target_depth = 3", "target_depth = 0");
        assert!(ExperimentConfig::from_toml_str(&shrink).is_err());
        let late = SAMPLE.replace("step = 50", "step = 100");
        assert!(ExperimentConfig::from_toml_str(&late).is_err());
        let unknown = SAMPLE.replace("seed = 3", "seed = 3\nbogus = 1");
        assert!(ExperimentConfig::from_toml_str(&unknown).is_err());
        let precision = SAMPLE.replace("seed = 3", "seed = 3\nprecision = 16");
        assert!(ExperimentConfig::from_toml_str(&precision).is_err());
    }

    #[test]
    fn warns_outside_stable_phase() {
        let late = SAMPLE.replace("step = 50", "step = 95");
        let c = ExperimentConfig::from_toml_str(&late).unwrap();
        assert_eq!(c.warnings().len(), 1);
    }
}
