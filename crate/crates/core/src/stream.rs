//! Samples, batches and the construction of a labeled stream from a static dataset.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// One labeled data instance.
///
/// The true label is sealed: it is only consulted by the oracle, by noise
/// injection and by evaluation. The training path works on `given_label`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub features: Vec<f64>,
    pub given_label: usize,
    true_label: usize,
}

impl Sample {
    /// Creates a clean sample (given label equals the true label).
    pub fn new(id: usize, features: Vec<f64>, label: usize) -> Self {
        Self {
            id,
            features,
            given_label: label,
            true_label: label,
        }
    }

    /// Creates a sample whose given label may differ from the true label.
    pub fn with_labels(id: usize, features: Vec<f64>, given_label: usize, true_label: usize) -> Self {
        Self {
            id,
            features,
            given_label,
            true_label,
        }
    }

    /// Ground truth. Reserved for the oracle, noise injection and evaluation.
    pub fn true_label(&self) -> usize {
        self.true_label
    }

    pub fn is_corrupted(&self) -> bool {
        self.given_label != self.true_label
    }
}

/// Samples arriving at interval `t` (1-based), ordered by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub t: usize,
    pub samples: Vec<Sample>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub num_features: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// A dataset cut into an initial clean seed, a holdout reserved from the seed,
/// a sequence of stream batches and a clean test set.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamLayout {
    pub seed: Vec<Sample>,
    pub holdout: Vec<Sample>,
    pub batches: Vec<Batch>,
    pub test: Vec<Sample>,
    pub num_classes: usize,
    pub num_features: usize,
}

impl StreamLayout {
    pub fn stream_len(&self) -> usize {
        self.batches.iter().map(Batch::len).sum()
    }

    /// Applies `f` to every sample of every stream batch.
    pub fn map_stream_samples(&mut self, mut f: impl FnMut(&mut Sample)) {
        for batch in &mut self.batches {
            batch.samples.iter_mut().for_each(&mut f);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamParams {
    pub seed_size: usize,
    pub holdout_fraction: f64,
    pub batch_size: usize,
    pub rng_seed: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum StreamError {
    #[error("seed_size must be at least 2 (one seed sample plus one holdout sample), got {0}")]
    SeedTooSmall(usize),
    #[error("batch_size must be at least 1")]
    ZeroBatchSize,
    #[error("holdout_fraction must lie strictly between 0 and 1, got {0}")]
    HoldoutFraction(f64),
    #[error("seed_size {seed_size} + batch_size {batch_size} exceeds the {available} training samples")]
    NotEnoughSamples {
        seed_size: usize,
        batch_size: usize,
        available: usize,
    },
    #[error("train has {train} classes but test has {test}")]
    ClassMismatch { train: usize, test: usize },
    #[error("train has {train} features but test has {test}")]
    FeatureMismatch { train: usize, test: usize },
}

/// Builds the stream layout from a training and a test set.
///
/// One seeded shuffle of `train` decides which samples form the seed. The
/// holdout is `floor(seed_size * holdout_fraction)` samples of the seed, at
/// least one. The rest is cut into consecutive batches; a short final batch
/// is kept.
pub fn make_stream(train: &Dataset, test: &Dataset, params: &StreamParams) -> Result<StreamLayout, StreamError> {
    let StreamParams {
        seed_size,
        holdout_fraction,
        batch_size,
        rng_seed,
    } = *params;

    if seed_size < 2 {
        return Err(StreamError::SeedTooSmall(seed_size));
    }
    if batch_size == 0 {
        return Err(StreamError::ZeroBatchSize);
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(StreamError::HoldoutFraction(holdout_fraction));
    }
    if seed_size + batch_size > train.len() {
        return Err(StreamError::NotEnoughSamples {
            seed_size,
            batch_size,
            available: train.len(),
        });
    }
    if train.num_classes != test.num_classes {
        return Err(StreamError::ClassMismatch {
            train: train.num_classes,
            test: test.num_classes,
        });
    }
    if train.num_features != test.num_features {
        return Err(StreamError::FeatureMismatch {
            train: train.num_features,
            test: test.num_features,
        });
    }

    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));

    let holdout_size = ((seed_size as f64 * holdout_fraction).floor() as usize).clamp(1, seed_size - 1);
    let pick = |idx: &[usize]| -> Vec<Sample> {
        let mut part: Vec<Sample> = idx.iter().map(|&i| train.samples[i].clone()).collect();
        part.sort_by_key(|s| s.id);
        part
    };

    let (initial, rest) = order.split_at(seed_size);
    let (seed_idx, holdout_idx) = initial.split_at(seed_size - holdout_size);
    let batches = rest
        .chunks(batch_size)
        .enumerate()
        .map(|(i, chunk)| Batch {
            t: i + 1,
            samples: pick(chunk),
        })
        .collect();

    Ok(StreamLayout {
        seed: pick(seed_idx),
        holdout: pick(holdout_idx),
        batches,
        test: test.samples.clone(),
        num_classes: train.num_classes,
        num_features: train.num_features,
    })
}
