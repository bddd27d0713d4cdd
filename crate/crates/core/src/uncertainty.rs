//! Uncertainty metrics over softmax outputs and top-k selection of samples
//! for the oracle.
//!
//! Every metric is oriented so that a larger score means "query first".

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::cross_entropy;
use crate::stream::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum UncertaintyMetric {
    /// `1 - P_best`
    LeastConfident,
    /// `1 - (P_best - P_second)`
    BestVsSecondBest,
    /// Cross-entropy against the given label.
    HighestLoss,
}

#[derive(Debug, Error, PartialEq)]
#[error("unknown metric `{0}` (expected one of: lc, bvsb, hl)")]
pub struct UnknownMetric(pub String);

impl UncertaintyMetric {
    pub const ALL: [Self; 3] = [Self::LeastConfident, Self::BestVsSecondBest, Self::HighestLoss];

    pub fn name(self) -> &'static str {
        match self {
            Self::LeastConfident => "lc",
            Self::BestVsSecondBest => "bvsb",
            Self::HighestLoss => "hl",
        }
    }

    pub fn score(self, probs: &[f64], given_label: usize) -> f64 {
        match self {
            Self::LeastConfident => 1.0 - top_two(probs).0,
            Self::BestVsSecondBest => {
                let (best, second) = top_two(probs);
                1.0 - (best - second)
            }
            Self::HighestLoss => cross_entropy(probs, given_label),
        }
    }
}

impl FromStr for UncertaintyMetric {
    type Err = UnknownMetric;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| UnknownMetric(s.to_string()))
    }
}

impl TryFrom<String> for UncertaintyMetric {
    type Error = UnknownMetric;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<UncertaintyMetric> for String {
    fn from(m: UncertaintyMetric) -> Self {
        m.name().to_string()
    }
}

impl fmt::Display for UncertaintyMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Largest and second largest entries. A single-entry vector has second 0.
fn top_two(probs: &[f64]) -> (f64, f64) {
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &p in probs {
        if p > best {
            second = best;
            best = p;
        } else if p > second {
            second = p;
        }
    }
    (best, if second.is_finite() { second } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub sample_id: usize,
    pub score: f64,
}

/// Descending score, then ascending id.
fn by_eligibility(a: &ScoredSample, b: &ScoredSample) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.sample_id.cmp(&b.sample_id))
}

/// Scores each candidate and returns them ordered by descending score,
/// ties broken by ascending sample id.
pub fn rank(noisy: &[Sample], probs_per_sample: &[Vec<f64>], metric: UncertaintyMetric) -> Vec<ScoredSample> {
    assert_eq!(noisy.len(), probs_per_sample.len(), "one probability vector per sample");
    let mut scored: Vec<ScoredSample> = noisy
        .iter()
        .zip(probs_per_sample)
        .map(|(s, p)| ScoredSample {
            sample_id: s.id,
            score: metric.score(p, s.given_label),
        })
        .collect();
    scored.sort_by(by_eligibility);
    scored
}

/// The `min(k, |noisy|)` most eligible samples, in ranking order.
pub fn rank_select(noisy: &[Sample], probs_per_sample: &[Vec<f64>], metric: UncertaintyMetric, k: usize) -> Vec<Sample> {
    let ranked = rank(noisy, probs_per_sample, metric);
    ranked
        .iter()
        .take(k)
        .map(|r| {
            noisy
                .iter()
                .find(|s| s.id == r.sample_id)
                .cloned()
                .expect("ranked ids come from the input")
        })
        .collect()
}
