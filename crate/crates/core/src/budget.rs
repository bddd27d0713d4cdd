//! Per-batch query quotas under a global oracle budget.
//!
//! The static policy asks a constant number of queries per batch. The dynamic
//! policy rescales the previous quota by the relative change of the average
//! prediction entropy:
//!
//! ```text
//! o(t) = o(t-1) * (1 - (L(t-2) - L(t-1)) / L(t-1))
//! ```
//!
//! Either way the granted amount is capped by what is left of the budget.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BudgetError {
    #[error("cannot average entropy over an empty set of predictions")]
    EmptyPredictions,
    #[error("used {used} queries but only {granted} were granted")]
    OverSpend { used: usize, granted: usize },
    #[error("loss must be finite and non-negative, got {0}")]
    BadLoss(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum QueryPolicy {
    Static { per_batch: usize },
    /// `floor` bounds the real-valued quota trajectory from below.
    Dynamic { initial_quota: usize, floor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyKind {
    Static,
    Dynamic,
}

#[derive(Debug, Error, PartialEq)]
#[error("unknown policy `{0}` (expected one of: static, dynamic)")]
pub struct UnknownPolicy(pub String);

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Static => "static",
            Self::Dynamic => "dynamic",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(Self::Static),
            "dynamic" => Ok(Self::Dynamic),
            other => Err(UnknownPolicy(other.to_string())),
        }
    }
}

impl TryFrom<String> for PolicyKind {
    type Error = UnknownPolicy;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PolicyKind> for String {
    fn from(p: PolicyKind) -> Self {
        p.name().to_string()
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mean Shannon entropy of the given probability vectors, with `0 ln 0 = 0`.
pub fn avg_entropy_loss<P: AsRef<[f64]>>(probs_list: &[P]) -> Result<f64, BudgetError> {
    if probs_list.is_empty() {
        return Err(BudgetError::EmptyPredictions);
    }
    let total: f64 = probs_list.iter().map(|p| entropy(p.as_ref())).sum();
    Ok(total / probs_list.len() as f64)
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuotaStep {
    pub quota: f64,
    /// Set when `loss_prev1 <= 0` left the update undefined and the previous
    /// quota was carried over.
    pub degenerate: bool,
}

/// One step of the loss-driven quota recursion, clamped below at zero.
pub fn dynamic_quota(prev_quota: f64, loss_prev2: f64, loss_prev1: f64) -> QuotaStep {
    if loss_prev1 <= 0.0 || !loss_prev1.is_finite() {
        log::warn!("dynamic quota undefined for L(t-1) = {loss_prev1}; keeping {prev_quota}");
        return QuotaStep {
            quota: prev_quota,
            degenerate: true,
        };
    }
    let raw = prev_quota * (1.0 - (loss_prev2 - loss_prev1) / loss_prev1);
    QuotaStep {
        quota: raw.max(0.0),
        degenerate: false,
    }
}

pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Quota decided for one interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuotaDecision {
    /// Real-valued policy quota before rounding and before the budget cap.
    pub candidate: f64,
    /// Queries the active learner may issue now.
    pub granted: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetState {
    /// `None` means unbounded.
    pub total_budget: Option<usize>,
    pub spent: usize,
    pub last_quota: f64,
    /// L(t-1)
    pub loss_prev: Option<f64>,
    /// L(t-2)
    pub loss_prev2: Option<f64>,
}

impl BudgetState {
    pub fn new(total_budget: Option<usize>) -> Self {
        Self {
            total_budget,
            spent: 0,
            last_quota: 0.0,
            loss_prev: None,
            loss_prev2: None,
        }
    }

    /// Records L(0), the loss right after initial training.
    pub fn seed_loss(&mut self, loss: f64) -> Result<(), BudgetError> {
        check_loss(loss)?;
        self.loss_prev = Some(loss);
        Ok(())
    }

    pub fn remaining(&self) -> usize {
        self.total_budget.map_or(usize::MAX, |b| b - self.spent)
    }

    pub fn effective_quota(&self, policy: &QueryPolicy, t: usize) -> QuotaDecision {
        let (candidate, degenerate) = match *policy {
            QueryPolicy::Static { per_batch } => (per_batch as f64, false),
            QueryPolicy::Dynamic { initial_quota, floor } => {
                if t <= 1 {
                    (initial_quota as f64, false)
                } else {
                    match (self.loss_prev2, self.loss_prev) {
                        (Some(l2), Some(l1)) => {
                            let step = dynamic_quota(self.last_quota, l2, l1);
                            (step.quota.max(floor), step.degenerate)
                        }
                        _ => (self.last_quota, true),
                    }
                }
            }
        };
        QuotaDecision {
            candidate,
            granted: round_half_up(candidate).min(self.remaining()),
            degenerate,
        }
    }

    /// Books `used` queries and shifts the loss window.
    pub fn commit_spend(&mut self, decision: &QuotaDecision, used: usize, new_loss: f64) -> Result<(), BudgetError> {
        if used > decision.granted {
            return Err(BudgetError::OverSpend {
                used,
                granted: decision.granted,
            });
        }
        check_loss(new_loss)?;
        self.spent += used;
        self.loss_prev2 = self.loss_prev;
        self.loss_prev = Some(new_loss);
        self.last_quota = decision.candidate;
        Ok(())
    }
}

fn check_loss(loss: f64) -> Result<(), BudgetError> {
    if loss.is_finite() && loss >= 0.0 {
        Ok(())
    } else {
        Err(BudgetError::BadLoss(loss))
    }
}
