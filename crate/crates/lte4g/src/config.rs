//! Experiment configuration: the JSON file format, validation, and
//! parsing for the flag values that need more than a plain string.
//!
//! Every field round-trips through the config file, unknown keys are
//! rejected, and command-line flags override file values before the
//! effective config is snapshotted next to the results.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imbalance::{DEFAULT_HEAD_QUOTA, DEFAULT_TEST_QUOTA, DEFAULT_VAL_QUOTA};
use crate::inference::ExpansionConfig;
use crate::model::AlphaMode;
use crate::training::{SchedulerKind, TrainConfig};

/// Which protocol builds the split manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// Fixed per-class quotas with a minority ratio.
    Manual,
    /// Geometric long-tail pruning.
    Longtail,
    /// Stratified 1:1:8 split of the graph as it is.
    Natural,
}

/// The training method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The full pipeline: pretrain, experts, distilled students,
    /// prototype routing.
    Lte4g,
    /// Plain cross-entropy.
    Origin,
    /// Inverse-frequency-weighted cross-entropy.
    Reweight,
    /// Minority-class duplication.
    Oversample,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lte4g => "lte4g",
            Method::Origin => "origin",
            Method::Reweight => "reweight",
            Method::Oversample => "oversample",
        }
    }
}

/// Protocol selection plus its parameters. The ratio and class count
/// only apply where the protocol uses them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    /// Minority-to-majority training ratio (manual) or tail decay target
    /// (long-tail).
    pub imb_ratio: f64,
    /// How many classes are made minority under the manual protocol.
    pub imb_classes: usize,
    /// Per-class training quota for majority classes (manual only).
    pub train_quota: usize,
    /// Per-class validation quota (manual and long-tail).
    pub val_quota: usize,
    /// Per-class test quota (manual and long-tail).
    pub test_quota: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            kind: ProtocolKind::Manual,
            imb_ratio: 0.1,
            imb_classes: 3,
            train_quota: DEFAULT_HEAD_QUOTA,
            val_quota: DEFAULT_VAL_QUOTA,
            test_quota: DEFAULT_TEST_QUOTA,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.imb_ratio > 0.0 && self.imb_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "imbalance ratio {} outside (0, 1]",
                self.imb_ratio
            )));
        }
        if self.train_quota == 0 || self.val_quota == 0 || self.test_quota == 0 {
            return Err(Error::Config(
                "per-class quotas must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Everything one experiment needs, storable as a single JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset directory (`meta.json`, `edges.tsv`, `features.tsv`,
    /// `labels.tsv`).
    pub dataset: PathBuf,
    pub protocol: ProtocolConfig,
    pub method: Method,
    pub train: TrainConfig,
    pub routing: ExpansionConfig,
    /// With distillation off, routing sends test nodes straight to the
    /// matching expert (picked by the node's own degree group) instead
    /// of a student; the student stage is skipped.
    pub distill: bool,
    /// Ablation: split the training set into subsets uniformly at
    /// random (sizes preserved) instead of by class size and degree.
    pub random_split: bool,
    /// One full run per seed; aggregates are reported across them.
    pub seeds: Vec<u64>,
    /// Output directory; per-seed artifacts land in `seed_<s>/` below it.
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::new(),
            protocol: ProtocolConfig::default(),
            method: Method::Lte4g,
            train: TrainConfig::default(),
            routing: ExpansionConfig::default(),
            distill: true,
            random_split: false,
            seeds: vec![0, 1, 2],
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::Config("no dataset directory given".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.out.as_os_str().is_empty() {
            return Err(Error::Config("no output directory given".into()));
        }
        self.protocol.validate()?;
        self.train.validate()?;
        self.routing.validate()
    }
}

/// Parses `--protocol` values; `lt` is shorthand for the long-tail
/// protocol.
pub fn parse_protocol(s: &str) -> Result<ProtocolKind> {
    match s {
        "manual" => Ok(ProtocolKind::Manual),
        "lt" | "longtail" => Ok(ProtocolKind::Longtail),
        "natural" => Ok(ProtocolKind::Natural),
        other => Err(Error::Config(format!(
            "unknown protocol {other:?} (expected manual, lt, or natural)"
        ))),
    }
}

/// Parses `--method` values.
pub fn parse_method(s: &str) -> Result<Method> {
    match s {
        "lte4g" => Ok(Method::Lte4g),
        "origin" => Ok(Method::Origin),
        "reweight" => Ok(Method::Reweight),
        "oversample" => Ok(Method::Oversample),
        other => Err(Error::Config(format!(
            "unknown method {other:?} (expected lte4g, origin, reweight, or oversample)"
        ))),
    }
}

/// Parses `--alpha` values: `invfreq` or `uniform:F`.
pub fn parse_alpha(s: &str) -> Result<AlphaMode> {
    if s == "invfreq" {
        return Ok(AlphaMode::InverseFrequency);
    }
    if let Some(raw) = s.strip_prefix("uniform:") {
        let a: f64 = raw
            .parse()
            .map_err(|_| Error::Config(format!("bad uniform focal weight {raw:?}")))?;
        return Ok(AlphaMode::Uniform(a));
    }
    Err(Error::Config(format!(
        "unknown alpha mode {s:?} (expected invfreq or uniform:F)"
    )))
}

/// Parses `--scheduler` values.
pub fn parse_scheduler(s: &str) -> Result<SchedulerKind> {
    match s {
        "convex" => Ok(SchedulerKind::Convex),
        "linear" => Ok(SchedulerKind::Linear),
        "cos-half" => Ok(SchedulerKind::CosineHalf),
        other => Err(Error::Config(format!(
            "unknown scheduler {other:?} (expected convex, linear, or cos-half)"
        ))),
    }
}

/// Parses `--seeds` values: comma-separated unsigned integers.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad seed {part:?} in {s:?}")))
        })
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("empty seed list".into()));
    }
    Ok(seeds)
}
