//! Experiment configuration: a JSON object with lowercase, underscore-separated keys.
//!
//! Only `dataset` and `mode` are required. For sweeps, `mode`, `metric` and
//! `policy` may also be lists; [`parse_sweep`] expands their cartesian product.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::budget::{PolicyKind, QueryPolicy};
use crate::data::ScalingKind;
use crate::engine::{EngineConfig, RunMode};
use crate::seeds;
use crate::stream::StreamParams;
use crate::uncertainty::UncertaintyMetric;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("config is not valid JSON: {0}")]
    Syntax(String),
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Csv(CsvSource),
    Blobs(BlobsSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default)]
    pub num_classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsSource {
    pub num_classes: usize,
    pub num_features: usize,
    /// Training samples per class (seed plus stream).
    pub per_class: usize,
    pub test_per_class: usize,
    pub spread: f64,
    /// Fixed generator seed. When absent it is derived per repetition.
    #[serde(default)]
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden_width: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            minibatch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

fn d_noise_rate() -> f64 {
    0.3
}
fn d_seed_size() -> usize {
    400
}
fn d_holdout_fraction() -> f64 {
    0.2
}
fn d_batch_size() -> usize {
    200
}
fn d_initial_epochs() -> usize {
    20
}
fn d_epochs_per_batch() -> usize {
    5
}
fn d_metric() -> UncertaintyMetric {
    UncertaintyMetric::BestVsSecondBest
}
fn d_policy() -> PolicyKind {
    PolicyKind::Static
}
fn d_quota() -> usize {
    10
}
fn d_rollback_a() -> f64 {
    0.2
}
fn d_repetitions() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub scaling: ScalingKind,
    #[serde(default = "d_noise_rate")]
    pub noise_rate: f64,
    #[serde(default = "d_seed_size")]
    pub seed_size: usize,
    #[serde(default = "d_holdout_fraction")]
    pub holdout_fraction: f64,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_initial_epochs")]
    pub initial_epochs: usize,
    #[serde(default = "d_epochs_per_batch")]
    pub epochs_per_batch: usize,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    pub mode: RunMode,
    #[serde(default = "d_metric")]
    pub metric: UncertaintyMetric,
    #[serde(default = "d_policy")]
    pub policy: PolicyKind,
    #[serde(default = "d_quota")]
    pub queries_per_batch: usize,
    #[serde(default = "d_quota")]
    pub initial_quota: usize,
    #[serde(default)]
    pub quota_floor: f64,
    #[serde(default)]
    pub total_budget: Option<usize>,
    #[serde(default = "d_rollback_a")]
    pub rollback_a: f64,
    #[serde(default)]
    pub master_rng_seed: u64,
    #[serde(default = "d_repetitions")]
    pub repetitions: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |key: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(key, format!("{v} is outside [0, 1]")))
            }
        };
        let at_least = |key: &str, v: usize, min: usize| {
            if v >= min {
                Ok(())
            } else {
                Err(invalid(key, format!("must be at least {min}, got {v}")))
            }
        };
        unit("noise_rate", self.noise_rate)?;
        unit("rollback_a", self.rollback_a)?;
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(invalid("holdout_fraction", format!("{} is outside (0, 1)", self.holdout_fraction)));
        }
        at_least("seed_size", self.seed_size, 2)?;
        at_least("batch_size", self.batch_size, 1)?;
        at_least("initial_epochs", self.initial_epochs, 1)?;
        at_least("epochs_per_batch", self.epochs_per_batch, 1)?;
        at_least("repetitions", self.repetitions, 1)?;
        at_least("classifier.minibatch_size", self.classifier.minibatch_size, 1)?;
        let c = &self.classifier;
        if !(c.learning_rate > 0.0 && c.learning_rate.is_finite()) {
            return Err(invalid("classifier.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&c.momentum) {
            return Err(invalid("classifier.momentum", format!("{} is outside [0, 1)", c.momentum)));
        }
        if !(c.weight_decay >= 0.0 && c.weight_decay.is_finite()) {
            return Err(invalid("classifier.weight_decay", "must be non-negative"));
        }
        if !(self.quota_floor >= 0.0 && self.quota_floor.is_finite()) {
            return Err(invalid("quota_floor", "must be non-negative"));
        }
        if self.policy == PolicyKind::Dynamic {
            at_least("initial_quota", self.initial_quota, 1)?;
            if self.total_budget.is_none() {
                return Err(invalid("total_budget", "required by the dynamic policy"));
            }
        }
        match &self.dataset {
            DatasetSource::Blobs(b) => {
                at_least("dataset.blobs.num_classes", b.num_classes, 2)?;
                at_least("dataset.blobs.num_features", b.num_features, 1)?;
                at_least("dataset.blobs.test_per_class", b.test_per_class, 1)?;
                if !(b.spread >= 0.0 && b.spread.is_finite()) {
                    return Err(invalid("dataset.blobs.spread", "must be non-negative"));
                }
            }
            DatasetSource::Csv(c) => {
                if let Some(n) = c.num_classes {
                    at_least("dataset.csv.num_classes", n, 2)?;
                }
            }
        }
        Ok(())
    }

    pub fn query_policy(&self) -> QueryPolicy {
        match self.policy {
            PolicyKind::Static => QueryPolicy::Static {
                per_batch: self.queries_per_batch,
            },
            PolicyKind::Dynamic => QueryPolicy::Dynamic {
                initial_quota: self.initial_quota,
                floor: self.quota_floor,
            },
        }
    }

    pub fn child_seed(&self, repetition: usize, tag: &str) -> u64 {
        seeds::derive(self.master_rng_seed, repetition as u64, tag)
    }

    pub fn stream_params(&self, repetition: usize) -> StreamParams {
        StreamParams {
            seed_size: self.seed_size,
            holdout_fraction: self.holdout_fraction,
            batch_size: self.batch_size,
            rng_seed: self.child_seed(repetition, "stream"),
        }
    }

    pub fn engine_config(&self, repetition: usize) -> EngineConfig {
        EngineConfig {
            mode: self.mode,
            metric: self.metric,
            policy: self.query_policy(),
            total_budget: self.total_budget,
            rollback_threshold: self.rollback_a,
            hidden_width: self.classifier.hidden_width,
            initial_epochs: self.initial_epochs,
            epochs_per_batch: self.epochs_per_batch,
            learning_rate: self.classifier.learning_rate,
            momentum: self.classifier.momentum,
            weight_decay: self.classifier.weight_decay,
            minibatch_size: self.classifier.minibatch_size,
            init_seed: self.child_seed(repetition, "init"),
            train_seed: self.child_seed(repetition, "train"),
        }
    }

    /// Short cell label used for sweep output directories.
    pub fn cell_name(&self) -> String {
        format!("{}_{}_{}", self.mode, self.metric, self.policy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn from_value(value: Value) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let key = e.path().to_string();
        invalid(if key == "." { "config" } else { &key }, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

fn parse_object(text: &str) -> Result<Map<String, Value>, ConfigError> {
    match serde_json::from_str::<Value>(text).map_err(|e| ConfigError::Syntax(e.to_string()))? {
        Value::Object(map) => Ok(map),
        _ => Err(ConfigError::Syntax("top level must be an object".into())),
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    from_value(Value::Object(parse_object(text)?))
}

const SWEEP_KEYS: [&str; 3] = ["mode", "metric", "policy"];

/// Expands list-valued `mode`, `metric` and `policy` keys into one config per
/// combination, in mode-major order.
pub fn parse_sweep(text: &str) -> Result<Vec<ExperimentConfig>, ConfigError> {
    let base = parse_object(text)?;
    let mut cells = vec![base.clone()];
    for key in SWEEP_KEYS {
        let Some(Value::Array(choices)) = base.get(key) else {
            continue;
        };
        if choices.is_empty() {
            return Err(invalid(key, "sweep list is empty"));
        }
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                choices.iter().map(move |choice| {
                    let mut next = cell.clone();
                    next.insert(key.to_string(), choice.clone());
                    next
                })
            })
            .collect();
    }
    cells.into_iter().map(|cell| from_value(Value::Object(cell))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "dataset": {"blobs": {"num_classes": 3, "num_features": 2, "per_class": 100,
                              "test_per_class": 10, "spread": 1.0}},
        "mode": "qactor"
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.classifier.momentum, 0.9);
        assert_eq!(c.classifier.learning_rate, 0.01);
        assert_eq!(c.classifier.weight_decay, 1e-4);
        assert_eq!(c.rollback_a, 0.2);
        assert_eq!(c.holdout_fraction, 0.2);
        assert_eq!(c.metric, UncertaintyMetric::BestVsSecondBest);
        assert_eq!(c.policy, PolicyKind::Static);
        assert_eq!(c.repetitions, 1);
        assert_eq!(c.scaling, ScalingKind::Standard);
    }

    fn with(extra: &str) -> String {
        MINIMAL.replacen("\"mode\": \"qactor\"", &format!("\"mode\": \"qactor\", {extra}"), 1)
    }

    #[test]
    fn unknown_metric_rejected() {
        let err = parse_config(&with(r#""metric": "entropy""#)).unwrap_err().to_string();
        assert!(err.contains("unknown metric"), "{err}");
        assert!(err.starts_with("metric"), "{err}");
    }

    #[test]
    fn noise_rate_range() {
        let err = parse_config(&with(r#""noise_rate": 1.5"#)).unwrap_err().to_string();
        assert!(err.starts_with("noise_rate"), "{err}");
        assert!(err.contains("outside"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config(&with(r#""learning_rte": 0.1"#)).unwrap_err().to_string();
        assert!(err.contains("learning_rte"), "{err}");
    }

    #[test]
    fn wrong_type_names_key() {
        let err = parse_config(&with(r#""classifier": {"momentum": "high"}"#))
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("classifier.momentum"), "{err}");
    }

    #[test]
    fn zero_repetitions_rejected() {
        let err = parse_config(&with(r#""repetitions": 0"#)).unwrap_err().to_string();
        assert!(err.starts_with("repetitions"), "{err}");
    }

    #[test]
    fn dynamic_needs_budget() {
        let err = parse_config(&with(r#""policy": "dynamic""#)).unwrap_err().to_string();
        assert!(err.starts_with("total_budget"), "{err}");
        let ok = parse_config(&with(r#""policy": "dynamic", "total_budget": 40, "initial_quota": 5"#)).unwrap();
        assert_eq!(
            ok.query_policy(),
            QueryPolicy::Dynamic {
                initial_quota: 5,
                floor: 0.0
            }
        );
    }

    #[test]
    fn list_rejected_by_run_parser() {
        let text = MINIMAL.replace("\"qactor\"", "[\"qactor\", \"q-only\"]");
        assert!(parse_config(&text).unwrap_err().to_string().starts_with("mode"));
    }

    #[test]
    fn sweep_expands_product() {
        let text = MINIMAL.replace("\"qactor\"", "[\"qactor\", \"q-only\"], \"metric\": [\"lc\", \"bvsb\", \"hl\"]");
        let cells = parse_sweep(&text).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].cell_name(), "qactor_lc_static");
        assert_eq!(cells[5].cell_name(), "q-only_hl_static");
        assert_eq!(parse_sweep(MINIMAL).unwrap().len(), 1);
    }

    #[test]
    fn child_seeds_ignore_mode() {
        let a = parse_config(MINIMAL).unwrap();
        let mut b = a.clone();
        b.mode = RunMode::QOnly;
        assert_eq!(a.stream_params(2), b.stream_params(2));
        assert_eq!(a.engine_config(2).init_seed, b.engine_config(2).init_seed);
        assert_ne!(a.stream_params(1), a.stream_params(2));
    }

    #[test]
    fn round_trip() {
        let c = parse_config(&with(r#""total_budget": 12, "classifier": {"learning_rate": 0.1}"#)).unwrap();
        assert_eq!(parse_config(&c.to_json()).unwrap(), c);
    }
}
