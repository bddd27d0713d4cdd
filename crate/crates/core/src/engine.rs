//! The per-batch learning loop.
//!
//! For each arriving batch the quality model (the classifier as it stood after
//! the previous batch) predicts labels. Samples whose prediction matches the
//! given label are kept as clean. The rest are ranked by uncertainty and the
//! top `o(t)` are relabeled by the oracle. The classifier is retrained once on
//! the clean and relabeled samples, and rolled back if holdout accuracy drops
//! by more than the rollback threshold.
//!
//! The selection baselines (`no-sel`, `q-only`, `al-only`, `opt-sel`) run
//! through the same loop with a different choice of training set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{avg_entropy_loss, BudgetError, BudgetState, QueryPolicy};
use crate::classifier::{argmax, ClassifierError, ClassifierModel, TrainingHyperparams};
use crate::seeds;
use crate::stream::{Batch, Sample, StreamLayout};
use crate::uncertainty::{rank_select, UncertaintyMetric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RunMode {
    QActor,
    NoSel,
    QOnly,
    AlOnly,
    OptSel,
}

#[derive(Debug, Error, PartialEq)]
#[error("unknown mode `{0}` (expected one of: qactor, no-sel, q-only, al-only, opt-sel)")]
pub struct UnknownMode(pub String);

impl RunMode {
    pub const ALL: [Self; 5] = [Self::QActor, Self::NoSel, Self::QOnly, Self::AlOnly, Self::OptSel];

    pub fn name(self) -> &'static str {
        match self {
            Self::QActor => "qactor",
            Self::NoSel => "no-sel",
            Self::QOnly => "q-only",
            Self::AlOnly => "al-only",
            Self::OptSel => "opt-sel",
        }
    }
}

impl FromStr for RunMode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| UnknownMode(s.to_string()))
    }
}

impl TryFrom<String> for RunMode {
    type Error = UnknownMode;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<RunMode> for String {
    fn from(m: RunMode) -> Self {
        m.name().to_string()
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("interval {t}: {source}")]
    Classifier {
        t: usize,
        #[source]
        source: ClassifierError,
    },
    #[error("interval {t}: {source}")]
    Budget {
        t: usize,
        #[source]
        source: BudgetError,
    },
    #[error("seed set is empty")]
    EmptySeed,
    #[error("holdout set is empty")]
    EmptyHoldout,
    #[error("rollback threshold must lie in [0, 1], got {0}")]
    RollbackThreshold(f64),
}

/// Anything that maps features to class probabilities can act as the quality model.
pub trait QualityModel {
    fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>, ClassifierError>;

    fn predict(&self, features: &[f64]) -> Result<usize, ClassifierError> {
        Ok(argmax(&self.predict_proba(features)?))
    }
}

impl QualityModel for ClassifierModel {
    fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        ClassifierModel::predict_proba(self, features)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub mode: RunMode,
    pub metric: UncertaintyMetric,
    pub policy: QueryPolicy,
    /// `None` means unbounded.
    pub total_budget: Option<usize>,
    pub rollback_threshold: f64,
    pub hidden_width: usize,
    pub initial_epochs: usize,
    pub epochs_per_batch: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub minibatch_size: usize,
    pub init_seed: u64,
    pub train_seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::QActor,
            metric: UncertaintyMetric::BestVsSecondBest,
            policy: QueryPolicy::Static { per_batch: 10 },
            total_budget: None,
            rollback_threshold: 0.2,
            hidden_width: 0,
            initial_epochs: 20,
            epochs_per_batch: 5,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            minibatch_size: 32,
            init_seed: 0,
            train_seed: 1,
        }
    }
}

impl EngineConfig {
    fn hyper(&self, epochs: usize, rng_seed: u64) -> TrainingHyperparams {
        TrainingHyperparams {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            epochs,
            minibatch_size: self.minibatch_size,
            rng_seed,
        }
    }
}

/// Per-interval metrics plus the bookkeeping needed to audit a run.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub t: usize,
    pub n_clean: usize,
    pub n_noisy: usize,
    pub n_queried: usize,
    pub n_queried_truly_noisy: usize,
    pub train_size: usize,
    pub avg_entropy: f64,
    pub holdout_acc: f64,
    pub test_acc: f64,
    pub rolled_back: bool,
    pub budget_spent_cumulative: usize,
    /// Policy quota before rounding and capping.
    pub quota_candidate: f64,
    /// `(L(t-2), L(t-1))` as seen when the quota was decided.
    pub loss_window: (Option<f64>, Option<f64>),
    pub training_ids: Vec<usize>,
    pub queried_ids: Vec<usize>,
}

/// Splits a batch by agreement between the quality model and the given label.
/// Both parts keep batch order.
pub fn partition<Q: QualityModel + ?Sized>(samples: &[Sample], quality: &Q) -> Result<(Vec<Sample>, Vec<Sample>), ClassifierError> {
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for s in samples {
        if quality.predict(&s.features)? == s.given_label {
            clean.push(s.clone());
        } else {
            noisy.push(s.clone());
        }
    }
    Ok((clean, noisy))
}

/// Replaces each given label with the true label.
pub fn oracle_relabel(samples: Vec<Sample>) -> Vec<Sample> {
    samples
        .into_iter()
        .map(|mut s| {
            s.given_label = s.true_label();
            s
        })
        .collect()
}

fn true_accuracy(model: &ClassifierModel, samples: &[Sample]) -> Result<f64, ClassifierError> {
    model.accuracy(samples, |s| &s.features, Sample::true_label)
}

/// Mutable state of one run: the classifier (which doubles as the next
/// interval's quality model), the budget and the rollback reference.
pub struct Learner {
    config: EngineConfig,
    model: ClassifierModel,
    budget: BudgetState,
    holdout: Vec<Sample>,
    test: Vec<Sample>,
    prev_holdout_acc: f64,
    initial_loss: f64,
    train_calls: usize,
    quality_override: Option<Box<dyn QualityModel + Send + Sync>>,
}

impl fmt::Debug for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Learner")
            .field("config", &self.config)
            .field("budget", &self.budget)
            .field("prev_holdout_acc", &self.prev_holdout_acc)
            .field("train_calls", &self.train_calls)
            .finish_non_exhaustive()
    }
}

impl Learner {
    /// Initializes the classifier and trains it on the clean seed.
    pub fn initialize(config: EngineConfig, layout: &StreamLayout) -> Result<Self, EngineError> {
        if layout.seed.is_empty() {
            return Err(EngineError::EmptySeed);
        }
        if layout.holdout.is_empty() {
            return Err(EngineError::EmptyHoldout);
        }
        if !(0.0..=1.0).contains(&config.rollback_threshold) {
            return Err(EngineError::RollbackThreshold(config.rollback_threshold));
        }
        let at_start = |source| EngineError::Classifier { t: 0, source };
        let mut model = ClassifierModel::new(
            layout.num_features,
            layout.num_classes,
            config.hidden_width,
            config.init_seed,
        )
        .map_err(at_start)?;

        let data: Vec<(&[f64], usize)> = layout.seed.iter().map(|s| (&s.features[..], s.given_label)).collect();
        let hyper = config.hyper(config.initial_epochs, seeds::derive(config.train_seed, 0, "train"));
        model.train_epochs(&data, &hyper).map_err(at_start)?;

        let probs = layout
            .seed
            .iter()
            .map(|s| model.predict_proba(&s.features))
            .collect::<Result<Vec<_>, _>>()
            .map_err(at_start)?;
        let initial_loss = avg_entropy_loss(&probs).map_err(|source| EngineError::Budget { t: 0, source })?;
        let mut budget = BudgetState::new(config.total_budget);
        budget
            .seed_loss(initial_loss)
            .map_err(|source| EngineError::Budget { t: 0, source })?;
        let prev_holdout_acc = true_accuracy(&model, &layout.holdout).map_err(at_start)?;

        Ok(Self {
            config,
            model,
            budget,
            holdout: layout.holdout.clone(),
            test: layout.test.clone(),
            prev_holdout_acc,
            initial_loss,
            train_calls: 0,
            quality_override: None,
        })
    }

    /// Replaces the previous-interval classifier as quality model.
    pub fn with_quality_model(mut self, quality: Box<dyn QualityModel + Send + Sync>) -> Self {
        self.quality_override = Some(quality);
        self
    }

    pub fn model(&self) -> &ClassifierModel {
        &self.model
    }

    pub fn budget(&self) -> &BudgetState {
        &self.budget
    }

    pub fn initial_loss(&self) -> f64 {
        self.initial_loss
    }

    pub fn initial_holdout_acc(&self) -> f64 {
        self.prev_holdout_acc
    }

    /// Number of `train_epochs` calls issued by `process_batch` so far.
    pub fn train_calls(&self) -> usize {
        self.train_calls
    }

    fn quality(&self) -> &dyn QualityModel {
        match &self.quality_override {
            Some(q) => q.as_ref(),
            None => &self.model,
        }
    }

    pub fn process_batch(&mut self, batch: &Batch) -> Result<BatchOutcome, EngineError> {
        let t = batch.t;
        let cls_err = |source| EngineError::Classifier { t, source };
        let budget_err = |source| EngineError::Budget { t, source };

        let decision = self.budget.effective_quota(&self.config.policy, t);
        let loss_window = (self.budget.loss_prev2, self.budget.loss_prev);

        let (n_clean, n_noisy, kept, queried) = match self.config.mode {
            RunMode::QActor => {
                let (clean, noisy) = partition(&batch.samples, self.quality()).map_err(cls_err)?;
                let probs = noisy
                    .iter()
                    .map(|s| self.quality().predict_proba(&s.features))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(cls_err)?;
                let picked = rank_select(&noisy, &probs, self.config.metric, decision.granted);
                (clean.len(), noisy.len(), clean, picked)
            }
            RunMode::QOnly => {
                let (clean, noisy) = partition(&batch.samples, self.quality()).map_err(cls_err)?;
                (clean.len(), noisy.len(), clean, Vec::new())
            }
            RunMode::NoSel => (batch.len(), 0, batch.samples.clone(), Vec::new()),
            RunMode::OptSel => {
                let (clean, noisy): (Vec<Sample>, Vec<Sample>) =
                    batch.samples.iter().cloned().partition(|s| !s.is_corrupted());
                (clean.len(), noisy.len(), clean, Vec::new())
            }
            RunMode::AlOnly => {
                let probs = batch
                    .samples
                    .iter()
                    .map(|s| self.model.predict_proba(&s.features))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(cls_err)?;
                let picked = rank_select(&batch.samples, &probs, self.config.metric, decision.granted);
                let rest = batch
                    .samples
                    .iter()
                    .filter(|s| !picked.iter().any(|p| p.id == s.id))
                    .cloned()
                    .collect();
                (0, batch.len(), rest, picked)
            }
        };

        let n_queried = queried.len();
        let n_queried_truly_noisy = queried.iter().filter(|s| s.is_corrupted()).count();
        let mut queried_ids: Vec<usize> = queried.iter().map(|s| s.id).collect();
        queried_ids.sort_unstable();

        let mut training: Vec<Sample> = kept;
        training.extend(oracle_relabel(queried));
        training.sort_by_key(|s| s.id);
        let training_ids: Vec<usize> = training.iter().map(|s| s.id).collect();

        let snapshot = self.model.snapshot();
        let new_loss = if training.is_empty() {
            self.budget.loss_prev.unwrap_or(self.initial_loss)
        } else {
            let data: Vec<(&[f64], usize)> = training.iter().map(|s| (&s.features[..], s.given_label)).collect();
            let hyper = self
                .config
                .hyper(self.config.epochs_per_batch, seeds::derive(self.config.train_seed, t as u64, "train"));
            self.train_calls += 1;
            self.model.train_epochs(&data, &hyper).map_err(cls_err)?;
            let probs = training
                .iter()
                .map(|s| self.model.predict_proba(&s.features))
                .collect::<Result<Vec<_>, _>>()
                .map_err(cls_err)?;
            avg_entropy_loss(&probs).map_err(budget_err)?
        };
        self.budget.commit_spend(&decision, n_queried, new_loss).map_err(budget_err)?;

        let mut holdout_acc = true_accuracy(&self.model, &self.holdout).map_err(cls_err)?;
        let rolled_back = self.prev_holdout_acc - holdout_acc > self.config.rollback_threshold;
        if rolled_back {
            self.model.restore(&snapshot).map_err(cls_err)?;
            holdout_acc = true_accuracy(&self.model, &self.holdout).map_err(cls_err)?;
        }
        self.prev_holdout_acc = holdout_acc;
        let test_acc = true_accuracy(&self.model, &self.test).map_err(cls_err)?;

        Ok(BatchOutcome {
            t,
            n_clean,
            n_noisy,
            n_queried,
            n_queried_truly_noisy,
            train_size: training_ids.len(),
            avg_entropy: new_loss,
            holdout_acc,
            test_acc,
            rolled_back,
            budget_spent_cumulative: self.budget.spent,
            quota_candidate: decision.candidate,
            loss_window,
            training_ids,
            queried_ids,
        })
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub outcomes: Vec<BatchOutcome>,
    pub model: ClassifierModel,
    pub initial_loss: f64,
    pub initial_holdout_acc: f64,
    pub train_calls: usize,
}

/// Initial training on the seed, then one `process_batch` per batch in order.
pub fn run_experiment(config: &EngineConfig, layout: &StreamLayout) -> Result<RunOutput, EngineError> {
    let mut learner = Learner::initialize(config.clone(), layout)?;
    let initial_holdout_acc = learner.initial_holdout_acc();
    let outcomes = layout
        .batches
        .iter()
        .map(|b| learner.process_batch(b))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunOutput {
        outcomes,
        initial_loss: learner.initial_loss(),
        initial_holdout_acc,
        train_calls: learner.train_calls(),
        model: learner.model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Predicts a fixed class per sample, keyed by the first feature (the id).
    struct Scripted {
        predictions: Vec<Vec<f64>>,
    }

    impl QualityModel for Scripted {
        fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>, ClassifierError> {
            Ok(self.predictions[features[0] as usize].clone())
        }
    }

    fn sample(id: usize, given: usize, truth: usize) -> Sample {
        Sample::with_labels(id, vec![id as f64, 1.0], given, truth)
    }

    #[test]
    fn partition_elementwise() {
        let batch = vec![sample(0, 0, 0), sample(1, 1, 1), sample(2, 2, 2), sample(3, 0, 0)];
        let quality = Scripted {
            predictions: vec![
                vec![0.9, 0.05, 0.05],
                vec![0.9, 0.05, 0.05],
                vec![0.1, 0.1, 0.8],
                vec![0.1, 0.8, 0.1],
            ],
        };
        let (clean, noisy) = partition(&batch, &quality).unwrap();
        assert_eq!(clean.iter().map(|s| s.id).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(noisy.iter().map(|s| s.id).collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn partition_extremes() {
        let batch = vec![sample(0, 1, 1), sample(1, 1, 1)];
        let agree = Scripted {
            predictions: vec![vec![0.2, 0.8]; 2],
        };
        let disagree = Scripted {
            predictions: vec![vec![0.8, 0.2]; 2],
        };
        assert_eq!(partition(&batch, &agree).unwrap().1.len(), 0);
        assert_eq!(partition(&batch, &disagree).unwrap().0.len(), 0);
    }

    #[test]
    fn oracle_examples() {
        let out = oracle_relabel(vec![sample(4, 3, 7), sample(5, 2, 2)]);
        assert_eq!(out[0].given_label, 7);
        assert_eq!(out[0].id, 4);
        assert_eq!(out[1], sample(5, 2, 2));
        assert!(oracle_relabel(Vec::new()).is_empty());
    }

    #[test]
    fn mode_names() {
        for m in RunMode::ALL {
            assert_eq!(m.name().parse::<RunMode>(), Ok(m));
        }
        assert!("qactor2".parse::<RunMode>().is_err());
    }
}
