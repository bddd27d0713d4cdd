#![allow(dead_code)]

use qactor::config::parse_config;
use qactor::engine::QualityModel;
use qactor::classifier::ClassifierError;
use qactor::{ExperimentConfig, Sample};

/// Blob stream shared by the ordering criteria: 5 classes, 16 features,
/// 400 seed samples plus 4000 stream samples in batches of 200.
pub fn blob_config(mode: &str, noise: f64, master_seed: u64, policy: &str) -> ExperimentConfig {
    parse_config(&format!(
        r#"{{
        "dataset": {{"blobs": {{"num_classes": 5, "num_features": 16, "per_class": 880,
                                "test_per_class": 200, "spread": 2.5}}}},
        "mode": "{mode}", "metric": "bvsb", "noise_rate": {noise},
        "seed_size": 400, "batch_size": 200, "initial_epochs": 5, "epochs_per_batch": 20,
        "classifier": {{"hidden_width": 0, "minibatch_size": 32}},
        "master_rng_seed": {master_seed} {policy}
    }}"#
    ))
    .expect("valid blob config")
}

pub fn static_policy(per_batch: usize) -> String {
    format!(r#", "policy": "static", "queries_per_batch": {per_batch}"#)
}

pub fn dynamic_policy(initial_quota: usize, total_budget: usize) -> String {
    format!(r#", "policy": "dynamic", "initial_quota": {initial_quota}, "total_budget": {total_budget}"#)
}

/// Small, fast stream for structural checks.
pub fn small_config(mode: &str, noise: f64, extra: &str) -> ExperimentConfig {
    parse_config(&format!(
        r#"{{
        "dataset": {{"blobs": {{"num_classes": 3, "num_features": 4, "per_class": 80,
                                "test_per_class": 20, "spread": 1.5}}}},
        "mode": "{mode}", "seed_size": 40, "batch_size": 50, "noise_rate": {noise},
        "initial_epochs": 5, "epochs_per_batch": 3, "queries_per_batch": 5,
        "classifier": {{"hidden_width": 0}}, "master_rng_seed": 3 {extra}
    }}"#
    ))
    .expect("valid small config")
}

/// Returns a fixed probability vector per sample, keyed by the first feature.
pub struct Scripted(pub Vec<Vec<f64>>);

impl QualityModel for Scripted {
    fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        Ok(self.0[features[0] as usize].clone())
    }
}

/// Predicts the true label of every stream sample it was built from.
pub struct Perfect {
    pub num_classes: usize,
    pub truth: std::collections::HashMap<u64, usize>,
}

impl Perfect {
    pub fn new(samples: &[Sample], num_classes: usize) -> Self {
        let truth = samples.iter().map(|s| (key(&s.features), s.true_label())).collect();
        Self { num_classes, truth }
    }
}

pub fn key(features: &[f64]) -> u64 {
    features.iter().fold(0xcbf2_9ce4_8422_2325, |h, x| (h ^ x.to_bits()).wrapping_mul(0x100_0000_01b3))
}

impl QualityModel for Perfect {
    fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        let mut p = vec![0.0; self.num_classes];
        p[self.truth[&key(features)]] = 1.0;
        Ok(p)
    }
}

pub fn bits(values: &[f64]) -> Vec<u64> {
    values.iter().map(|v| v.to_bits()).collect()
}
