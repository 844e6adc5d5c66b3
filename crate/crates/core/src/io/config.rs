//! Human-editable run configuration (TOML).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::TimeEncodingConfig;
use crate::losses::LossWeights;
use crate::model::HeadInit;
use crate::stream::{permute_tasks, MemoryStrategy, TaskSchedule};
use crate::trainer::{standard_benchmark, ExperimentConfig, TrainConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoder_hidden: usize,
    pub feature_dim: usize,
    pub field_hidden: usize,
    pub head_init: HeadInit,
    pub time: TimeEncodingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: usize,
    pub warmup: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub clip_norm: f64,
    pub ema_alpha: f64,
    pub eval_per_class: usize,
    pub eval_at_intro: bool,
    pub time_shuffle: f64,
    pub weights: LossWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemorySection {
    pub per_class: usize,
    pub strategy: MemoryStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Write a model checkpoint at every step boundary.
    pub checkpoints: bool,
    /// Write the per-iteration loss log.
    pub run_log: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { checkpoints: true, run_log: true }
    }
}

/// The on-disk form of an experiment. Missing keys take defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub seed: u64,
    pub variant: Variant,
    /// Order of the incremental steps `1..=T` applied to `schedule`; empty means the natural order.
    #[serde(default)]
    pub order: Vec<usize>,
    pub model: ModelSection,
    pub train: TrainSection,
    pub memory: MemorySection,
    pub outputs: OutputSection,
    pub schedule: TaskSchedule,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        Self::from_experiment(&ExperimentConfig {
            train: TrainConfig::default(),
            schedule: standard_benchmark(),
        })
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        RunConfigFile::default().model
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        RunConfigFile::default().train
    }
}

impl Default for MemorySection {
    fn default() -> Self {
        RunConfigFile::default().memory
    }
}

impl RunConfigFile {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        let t = &cfg.train;
        Self {
            seed: t.seed,
            variant: t.variant,
            order: (1..cfg.schedule.num_steps()).collect(),
            model: ModelSection {
                encoder_hidden: t.encoder_hidden,
                feature_dim: t.feature_dim,
                field_hidden: t.field_hidden,
                head_init: t.head_init,
                time: t.time.clone(),
            },
            train: TrainSection {
                iterations: t.iterations,
                warmup: t.warmup,
                batch: t.batch,
                lr: t.lr,
                momentum: t.momentum,
                weight_decay: t.weight_decay,
                poly_power: t.poly_power,
                clip_norm: t.clip_norm,
                ema_alpha: t.ema_alpha,
                eval_per_class: t.eval_per_class,
                eval_at_intro: t.eval_at_intro,
                time_shuffle: t.time_shuffle,
                weights: t.weights.clone(),
            },
            memory: MemorySection {
                per_class: t.memory_per_class,
                strategy: t.memory_strategy,
            },
            outputs: OutputSection::default(),
            schedule: cfg.schedule.clone(),
        }
    }

    /// Fills an empty `order` with the identity so the echoed file is complete.
    pub fn materialize(mut self) -> Self {
        if self.order.is_empty() {
            self.order = (1..self.schedule.num_steps()).collect();
        }
        self
    }

    /// The experiment this file describes, with the task order applied.
    pub fn to_experiment(&self) -> Result<ExperimentConfig> {
        let schedule = if self.order.is_empty() {
            self.schedule.clone()
        } else {
            permute_tasks(&self.schedule, &self.order)?
        };
        let m = &self.model;
        let t = &self.train;
        let cfg = ExperimentConfig {
            train: TrainConfig {
                weights: t.weights.clone(),
                iterations: t.iterations,
                warmup: t.warmup,
                batch: t.batch,
                lr: t.lr,
                momentum: t.momentum,
                weight_decay: t.weight_decay,
                poly_power: t.poly_power,
                clip_norm: t.clip_norm,
                seed: self.seed,
                variant: self.variant,
                memory_per_class: self.memory.per_class,
                memory_strategy: self.memory.strategy,
                ema_alpha: t.ema_alpha,
                encoder_hidden: m.encoder_hidden,
                feature_dim: m.feature_dim,
                field_hidden: m.field_hidden,
                time: m.time.clone(),
                head_init: m.head_init,
                eval_per_class: t.eval_per_class,
                eval_at_intro: t.eval_at_intro,
                time_shuffle: t.time_shuffle,
            },
            schedule,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Argument(format!("cannot serialize config: {e}")))
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())].iter().filter(|&&b| b == b'\n').count() + 1
}

/// Parses and validates a config document. Errors carry the 1-based line of the problem.
pub fn parse_config(text: &str) -> Result<RunConfigFile> {
    let cfg: RunConfigFile = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        msg: e.message().to_string(),
    })?;
    let cfg = cfg.materialize();
    cfg.to_experiment()?;
    Ok(cfg)
}
