//! Dataset ingestion, feature scaling, symmetric label noise and synthetic blobs.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream::{Dataset, Sample};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}: line {line}: {message}")]
    Row {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: no data rows")]
    Empty { path: PathBuf },
    #[error("num_classes override {given} does not cover label {max_label}")]
    ClassOverride { given: usize, max_label: usize },
    #[error("scaler has not been fitted")]
    UnfittedScaler,
    #[error("cannot fit a scaler on an empty sample set")]
    EmptyFit,
    #[error("noise rate must lie in [0, 1], got {0}")]
    NoiseRate(f64),
}

/// Reads a comma-separated file with a header row and an integer `label` column.
///
/// Every other column is a numeric feature. Sample ids follow row order.
pub fn load_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let csv_err = |e: csv::Error| DataError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(DataError::Empty {
            path: path.to_path_buf(),
        });
    }
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| DataError::Csv {
            path: path.to_path_buf(),
            message: "header has no `label` column".into(),
        })?;
    let width = headers.len();

    let mut samples = Vec::new();
    let mut max_label = 0usize;
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let row_err = |message: String| DataError::Row {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() != width {
            return Err(row_err(format!("expected {width} fields, found {}", record.len())));
        }
        let mut features = Vec::with_capacity(width - 1);
        let mut label = 0usize;
        for (col, field) in record.iter().enumerate() {
            if col == label_col {
                label = field
                    .parse::<usize>()
                    .map_err(|_| row_err(format!("label `{field}` is not a non-negative integer")))?;
            } else {
                if field.is_empty() {
                    return Err(row_err(format!("missing value in column `{}`", &headers[col])));
                }
                let value = field
                    .parse::<f64>()
                    .map_err(|_| row_err(format!("`{field}` in column `{}` is not a number", &headers[col])))?;
                if !value.is_finite() {
                    return Err(row_err(format!("non-finite value in column `{}`", &headers[col])));
                }
                features.push(value);
            }
        }
        max_label = max_label.max(label);
        samples.push(Sample::new(samples.len(), features, label));
    }

    if samples.is_empty() {
        return Err(DataError::Empty {
            path: path.to_path_buf(),
        });
    }
    let num_classes = match num_classes {
        Some(c) if c <= max_label => return Err(DataError::ClassOverride { given: c, max_label }),
        Some(c) => c,
        None => max_label + 1,
    };
    Ok(Dataset {
        samples,
        num_classes,
        num_features: width - 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingKind {
    /// Zero mean, unit variance per feature.
    #[default]
    Standard,
    /// Maps the fitted range of each feature onto [0, 1].
    MinMax,
    None,
}

/// Per-feature affine transform `(x - offset) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    kind: ScalingKind,
    offset: Vec<f64>,
    scale: Vec<f64>,
    fitted: bool,
}

impl FeatureScaler {
    pub fn unfitted(kind: ScalingKind) -> Self {
        Self {
            kind,
            offset: Vec::new(),
            scale: Vec::new(),
            fitted: false,
        }
    }

    /// Fits on clean seed samples. Zero-spread features get scale 1.
    pub fn fit(kind: ScalingKind, samples: &[Sample]) -> Result<Self, DataError> {
        let first = samples.first().ok_or(DataError::EmptyFit)?;
        let k = first.features.len();
        let n = samples.len() as f64;
        let (offset, scale) = match kind {
            ScalingKind::Standard => {
                let mut mean = vec![0.0; k];
                for s in samples {
                    for (m, x) in mean.iter_mut().zip(&s.features) {
                        *m += x;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![0.0; k];
                for s in samples {
                    for ((v, x), m) in var.iter_mut().zip(&s.features).zip(&mean) {
                        *v += (x - m) * (x - m);
                    }
                }
                let std = var
                    .into_iter()
                    .map(|v| (v / n).sqrt())
                    .map(|s| if s > 0.0 { s } else { 1.0 })
                    .collect();
                (mean, std)
            }
            ScalingKind::MinMax => {
                let mut lo = vec![f64::INFINITY; k];
                let mut hi = vec![f64::NEG_INFINITY; k];
                for s in samples {
                    for (j, &x) in s.features.iter().enumerate() {
                        lo[j] = lo[j].min(x);
                        hi[j] = hi[j].max(x);
                    }
                }
                let range = lo
                    .iter()
                    .zip(&hi)
                    .map(|(l, h)| if h > l { h - l } else { 1.0 })
                    .collect();
                (lo, range)
            }
            ScalingKind::None => (vec![0.0; k], vec![1.0; k]),
        };
        Ok(Self {
            kind,
            offset,
            scale,
            fitted: true,
        })
    }

    pub fn kind(&self) -> ScalingKind {
        self.kind
    }

    pub fn mean(&self) -> &[f64] {
        &self.offset
    }

    pub fn std(&self) -> &[f64] {
        &self.scale
    }

    /// Transforms features in place. Not idempotent: apply once per sample.
    pub fn apply(&self, samples: &mut [Sample]) -> Result<(), DataError> {
        if !self.fitted {
            return Err(DataError::UnfittedScaler);
        }
        for s in samples {
            for ((x, o), sc) in s.features.iter_mut().zip(&self.offset).zip(&self.scale) {
                *x = (*x - o) / sc;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub rate: f64,
    pub rng_seed: u64,
}

impl NoiseSpec {
    pub fn new(rate: f64, rng_seed: u64) -> Result<Self, DataError> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(DataError::NoiseRate(rate));
        }
        Ok(Self { rate, rng_seed })
    }
}

/// Symmetric label noise: each sample is corrupted independently with
/// probability `rate`, its given label replaced by one of the other `C - 1`
/// classes chosen uniformly. Returns the number of corrupted samples.
pub fn inject_symmetric_noise(samples: &mut [Sample], spec: &NoiseSpec, num_classes: usize) -> usize {
    assert!(num_classes >= 2, "symmetric noise needs at least two classes");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut corrupted = 0;
    for s in samples {
        let flip = rng.random::<f64>() < spec.rate;
        if flip {
            let r = rng.random_range(0..num_classes - 1);
            let truth = s.true_label();
            s.given_label = if r < truth { r } else { r + 1 };
            corrupted += 1;
        }
    }
    corrupted
}

/// Gaussian class clusters. Class means are standard normal scaled by 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Blobs {
    means: Vec<Vec<f64>>,
}

impl Blobs {
    pub fn new(num_classes: usize, num_features: usize, rng_seed: u64) -> Self {
        assert!(num_classes >= 2 && num_features >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let means = (0..num_classes)
            .map(|_| {
                (0..num_features)
                    .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self { means }
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    /// Draws `per_class` samples per class, interleaved by class, with ids
    /// starting at `first_id`.
    pub fn sample(&self, per_class: usize, spread: f64, first_id: usize, rng_seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let c = self.means.len();
        let k = self.means[0].len();
        let mut samples = Vec::with_capacity(per_class * c);
        for _ in 0..per_class {
            for (label, mean) in self.means.iter().enumerate() {
                let features = mean
                    .iter()
                    .map(|m| m + spread * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                samples.push(Sample::new(first_id + samples.len(), features, label));
            }
        }
        Dataset {
            samples,
            num_classes: c,
            num_features: k,
        }
    }
}

pub fn make_blobs(num_classes: usize, num_features: usize, per_class: usize, spread: f64, rng_seed: u64) -> Dataset {
    Blobs::new(num_classes, num_features, rng_seed).sample(per_class, spread, 0, rng_seed.wrapping_add(1))
}
