//! Experiment configuration: a TOML file with flag overrides layered on
//! top by the CLI (flags win).

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{AttributeSchema, DateInterval, PeriodSplit};
use crate::error::{Error, Result};
use crate::train::{LossKind, LossSpec, ModelVariant, TrainOptions};

fn default_epsilon() -> f64 {
    0.1
}
fn default_hidden() -> usize {
    256
}
fn default_dropout() -> f64 {
    0.4
}
fn default_seq_len() -> usize {
    270
}
fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    256
}
fn default_lr() -> f64 {
    1e-3
}
fn default_clip() -> f64 {
    1.0
}
fn default_seeds() -> Vec<u64> {
    (1..=8).collect()
}
fn default_train_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(1999, 10, 1).unwrap()
}
fn default_train_end() -> NaiveDate {
    NaiveDate::from_ymd_opt(2008, 9, 30).unwrap()
}
fn default_validation_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(1989, 10, 1).unwrap()
}
fn default_validation_end() -> NaiveDate {
    NaiveDate::from_ymd_opt(1999, 9, 30).unwrap()
}
fn default_schema() -> AttributeSchema {
    AttributeSchema::Camels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub variant: ModelVariant,
    pub loss: LossKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_hidden")]
    pub hidden_size: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_seq_len")]
    pub sequence_length: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_train_start")]
    pub train_start: NaiveDate,
    #[serde(default = "default_train_end")]
    pub train_end: NaiveDate,
    #[serde(default = "default_validation_start")]
    pub validation_start: NaiveDate,
    #[serde(default = "default_validation_end")]
    pub validation_end: NaiveDate,
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default = "default_schema")]
    pub attribute_schema: AttributeSchema,
    /// Periodic checkpoint interval in epochs; 0 keeps only the final one.
    #[serde(default)]
    pub save_every: usize,
}

impl TrainingConfig {
    /// Sensible defaults around the canonical experiment: entity-aware
    /// cell, basin-averaged loss, 256 hidden units, 270-day windows.
    pub fn with_roots(data_root: PathBuf, out_dir: PathBuf) -> Self {
        TrainingConfig {
            variant: ModelVariant::Ealstm,
            loss: LossKind::BasinNse,
            epsilon: default_epsilon(),
            hidden_size: default_hidden(),
            dropout: default_dropout(),
            sequence_length: default_seq_len(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            steps_per_epoch: None,
            learning_rate: default_lr(),
            clip_norm: default_clip(),
            seeds: default_seeds(),
            train_start: default_train_start(),
            train_end: default_train_end(),
            validation_start: default_validation_start(),
            validation_end: default_validation_end(),
            data_root,
            out_dir,
            attribute_schema: default_schema(),
            save_every: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {}", path.display(), e),
            ))
        })?;
        let config: TrainingConfig = toml::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {}", path.display(), e)))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        crate::checkpoint::write_atomic(path, text.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds contains duplicates".into()));
        }
        self.split()?;
        self.train_options(self.seeds[0]).validate()
    }

    pub fn split(&self) -> Result<PeriodSplit> {
        PeriodSplit::new(
            DateInterval::new(self.train_start, self.train_end)?,
            DateInterval::new(self.validation_start, self.validation_end)?,
        )
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            kind: self.loss,
            epsilon: self.epsilon,
        }
    }

    pub fn train_options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            variant: self.variant,
            loss: self.loss_spec(),
            hidden_size: self.hidden_size,
            dropout: self.dropout,
            sequence_length: self.sequence_length,
            epochs: self.epochs,
            batch_size: self.batch_size,
            steps_per_epoch: self.steps_per_epoch,
            learning_rate: self.learning_rate,
            clip_norm: self.clip_norm,
            seed,
            save_every: self.save_every,
        }
    }
}
