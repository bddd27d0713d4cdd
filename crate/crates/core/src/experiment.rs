//! Repetitions, sweeps and their on-disk outputs.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{DatasetSource, ExperimentConfig};
use crate::data::{inject_symmetric_noise, load_csv, Blobs, DataError, FeatureScaler, NoiseSpec};
use crate::engine::{run_experiment, BatchOutcome, EngineError};
use crate::report::{write_report, ReportError};
use crate::stream::{make_stream, Sample, StreamError, StreamLayout};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("repetition {repetition}: {source}")]
    Data {
        repetition: usize,
        #[source]
        source: DataError,
    },
    #[error("repetition {repetition}: {source}")]
    Stream {
        repetition: usize,
        #[source]
        source: StreamError,
    },
    #[error("repetition {repetition}: {source}")]
    Engine {
        repetition: usize,
        #[source]
        source: EngineError,
    },
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Builds the noisy stream for one repetition.
///
/// Depends only on the dataset, stream, scaling and noise settings plus the
/// master seed and repetition index, so every mode, metric and policy of a
/// sweep sees the same stream.
pub fn prepare_stream(config: &ExperimentConfig, repetition: usize) -> Result<StreamLayout, ExperimentError> {
    let data_err = |source| ExperimentError::Data { repetition, source };
    let (train, test) = match &config.dataset {
        DatasetSource::Csv(src) => (
            load_csv(&src.train, src.num_classes).map_err(data_err)?,
            load_csv(&src.test, src.num_classes).map_err(data_err)?,
        ),
        DatasetSource::Blobs(b) => {
            let seed = b.rng_seed.unwrap_or_else(|| config.child_seed(repetition, "blobs"));
            let blobs = Blobs::new(b.num_classes, b.num_features, seed);
            let train = blobs.sample(b.per_class, b.spread, 0, seeds_for(seed, "train"));
            let test = blobs.sample(b.test_per_class, b.spread, train.len(), seeds_for(seed, "test"));
            (train, test)
        }
    };

    let mut layout = make_stream(&train, &test, &config.stream_params(repetition))
        .map_err(|source| ExperimentError::Stream { repetition, source })?;

    let initial: Vec<Sample> = layout.seed.iter().chain(&layout.holdout).cloned().collect();
    let scaler = FeatureScaler::fit(config.scaling, &initial).map_err(data_err)?;
    scaler.apply(&mut layout.seed).map_err(data_err)?;
    scaler.apply(&mut layout.holdout).map_err(data_err)?;
    scaler.apply(&mut layout.test).map_err(data_err)?;
    for batch in &mut layout.batches {
        scaler.apply(&mut batch.samples).map_err(data_err)?;
    }

    let noise = NoiseSpec::new(config.noise_rate, config.child_seed(repetition, "noise")).map_err(data_err)?;
    let num_classes = layout.num_classes;
    for batch in &mut layout.batches {
        let spec = NoiseSpec {
            rng_seed: crate::seeds::derive(noise.rng_seed, batch.t as u64, "batch"),
            ..noise
        };
        inject_symmetric_noise(&mut batch.samples, &spec, num_classes);
    }
    Ok(layout)
}

fn seeds_for(seed: u64, tag: &str) -> u64 {
    crate::seeds::derive(seed, 0, tag)
}

#[derive(Debug, Clone, Serialize)]
pub struct RepetitionSummary {
    pub repetition: usize,
    pub final_test_acc: f64,
    pub last_quarter_test_acc: f64,
    pub total_queries: usize,
    pub rollbacks: usize,
    #[serde(skip)]
    pub outcomes: Vec<BatchOutcome>,
}

impl RepetitionSummary {
    pub fn from_outcomes(repetition: usize, outcomes: Vec<BatchOutcome>) -> Self {
        Self {
            repetition,
            final_test_acc: outcomes.last().map_or(0.0, |o| o.test_acc),
            last_quarter_test_acc: last_quarter_mean(&outcomes),
            total_queries: outcomes.iter().map(|o| o.n_queried).sum(),
            rollbacks: outcomes.iter().filter(|o| o.rolled_back).count(),
            outcomes,
        }
    }
}

/// Mean test accuracy over the last `ceil(T / 4)` batches.
pub fn last_quarter_mean(outcomes: &[BatchOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    let n = outcomes.len().div_ceil(4);
    outcomes[outcomes.len() - n..].iter().map(|o| o.test_acc).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub repetitions: Vec<RepetitionSummary>,
    pub mean_final_test_acc: f64,
    pub mean_last_quarter_test_acc: f64,
    pub mean_total_queries: f64,
}

pub fn run_repetition(config: &ExperimentConfig, repetition: usize) -> Result<RepetitionSummary, ExperimentError> {
    let layout = prepare_stream(config, repetition)?;
    let output = run_experiment(&config.engine_config(repetition), &layout)
        .map_err(|source| ExperimentError::Engine { repetition, source })?;
    Ok(RepetitionSummary::from_outcomes(repetition, output.outcomes))
}

/// Runs every repetition (in parallel) and aggregates.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary, ExperimentError> {
    let repetitions = (0..config.repetitions)
        .into_par_iter()
        .map(|r| run_repetition(config, r))
        .collect::<Result<Vec<_>, _>>()?;
    let n = repetitions.len().max(1) as f64;
    Ok(RunSummary {
        config: config.clone(),
        mean_final_test_acc: repetitions.iter().map(|r| r.final_test_acc).sum::<f64>() / n,
        mean_last_quarter_test_acc: repetitions.iter().map(|r| r.last_quarter_test_acc).sum::<f64>() / n,
        mean_total_queries: repetitions.iter().map(|r| r.total_queries as f64).sum::<f64>() / n,
        repetitions,
    })
}

fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `rep_<r>.csv` per repetition and `summary.json` into `out`.
pub fn write_outputs(summary: &RunSummary, out: &Path) -> Result<(), ExperimentError> {
    create_dir(out)?;
    for rep in &summary.repetitions {
        write_report(&rep.outcomes, out.join(format!("rep_{}.csv", rep.repetition)))?;
    }
    let path = out.join("summary.json");
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(&path, json + "\n").map_err(|source| ExperimentError::Io { path, source })
}

pub fn run_to_dir(config: &ExperimentConfig, out: &Path) -> Result<RunSummary, ExperimentError> {
    let summary = run(config)?;
    write_outputs(&summary, out)?;
    Ok(summary)
}

/// Runs each sweep cell into `out/<mode>_<metric>_<policy>/`.
pub fn sweep_to_dir(cells: &[ExperimentConfig], out: &Path) -> Result<Vec<RunSummary>, ExperimentError> {
    let summaries = cells.par_iter().map(run).collect::<Result<Vec<_>, _>>()?;
    for summary in &summaries {
        write_outputs(summary, &out.join(summary.config.cell_name()))?;
    }
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn config(mode: &str) -> ExperimentConfig {
        parse_config(&format!(
            r#"{{
            "dataset": {{"blobs": {{"num_classes": 3, "num_features": 4, "per_class": 60,
                                    "test_per_class": 20, "spread": 1.5}}}},
            "mode": "{mode}", "seed_size": 30, "batch_size": 50, "noise_rate": 0.4,
            "initial_epochs": 5, "epochs_per_batch": 2, "queries_per_batch": 4,
            "classifier": {{"hidden_width": 0}}, "repetitions": 3, "master_rng_seed": 9
        }}"#
        ))
        .unwrap()
    }

    #[test]
    fn last_quarter_window() {
        let mk = |acc: f64| BatchOutcome {
            t: 0,
            n_clean: 0,
            n_noisy: 0,
            n_queried: 0,
            n_queried_truly_noisy: 0,
            train_size: 0,
            avg_entropy: 0.0,
            holdout_acc: 0.0,
            test_acc: acc,
            rolled_back: false,
            budget_spent_cumulative: 0,
            quota_candidate: 0.0,
            loss_window: (None, None),
            training_ids: Vec::new(),
            queried_ids: Vec::new(),
        };
        let outs: Vec<BatchOutcome> = [0.0, 0.0, 0.0, 0.0, 0.5, 1.0].into_iter().map(mk).collect();
        assert_eq!(last_quarter_mean(&outs), 0.75);
        assert_eq!(last_quarter_mean(&outs[..1]), 0.0);
    }

    #[test]
    fn streams_are_paired_across_modes() {
        let a = prepare_stream(&config("qactor"), 1).unwrap();
        let b = prepare_stream(&config("q-only"), 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, prepare_stream(&config("qactor"), 2).unwrap());
    }

    #[test]
    fn noise_only_touches_stream() {
        let layout = prepare_stream(&config("qactor"), 0).unwrap();
        assert!(layout.seed.iter().chain(&layout.holdout).chain(&layout.test).all(|s| !s.is_corrupted()));
        let corrupted = layout.batches.iter().flat_map(|b| &b.samples).filter(|s| s.is_corrupted()).count();
        assert!(corrupted > 0);
    }

    #[test]
    fn repeated_runs_match() {
        let first = run(&config("qactor")).unwrap();
        let second = run(&config("qactor")).unwrap();
        assert_eq!(first.repetitions.len(), 3);
        for (a, b) in first.repetitions.iter().zip(&second.repetitions) {
            assert_eq!(a.outcomes, b.outcomes);
        }
    }

    #[test]
    fn outputs_written() {
        let dir = tempfile::tempdir().unwrap();
        run_to_dir(&config("no-sel"), dir.path()).unwrap();
        for name in ["rep_0.csv", "rep_1.csv", "rep_2.csv", "summary.json"] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
    }
}
