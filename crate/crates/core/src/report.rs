//! Per-batch CSV reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::engine::BatchOutcome;

pub const REPORT_HEADER: &str = "t,n_clean,n_noisy,n_queried,n_queried_truly_noisy,train_size,avg_entropy,holdout_acc,test_acc,rolled_back,budget_spent_cumulative";

#[derive(Debug, Error)]
#[error("{path}: {source}")]
pub struct ReportError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

pub fn format_report(outcomes: &[BatchOutcome]) -> String {
    let mut out = String::with_capacity(64 * (outcomes.len() + 1));
    out.push_str(REPORT_HEADER);
    out.push('\n');
    for o in outcomes {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{},{}",
            o.t,
            o.n_clean,
            o.n_noisy,
            o.n_queried,
            o.n_queried_truly_noisy,
            o.train_size,
            o.avg_entropy,
            o.holdout_acc,
            o.test_acc,
            u8::from(o.rolled_back),
            o.budget_spent_cumulative,
        );
    }
    out
}

/// Writes (or overwrites) the report at `path`.
pub fn write_report(outcomes: &[BatchOutcome], path: impl AsRef<Path>) -> Result<(), ReportError> {
    let path = path.as_ref();
    std::fs::write(path, format_report(outcomes)).map_err(|source| ReportError {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome() -> BatchOutcome {
        BatchOutcome {
            t: 3,
            n_clean: 150,
            n_noisy: 50,
            n_queried: 10,
            n_queried_truly_noisy: 7,
            train_size: 160,
            avg_entropy: 0.123_456_789,
            holdout_acc: 0.9,
            test_acc: 2.0 / 3.0,
            rolled_back: true,
            budget_spent_cumulative: 30,
            quota_candidate: 10.0,
            loss_window: (None, Some(1.0)),
            training_ids: Vec::new(),
            queried_ids: Vec::new(),
        }
    }

    #[test]
    fn header_only_when_empty() {
        assert_eq!(format_report(&[]), format!("{REPORT_HEADER}\n"));
    }

    #[test]
    fn one_row() {
        let text = format_report(&[outcome()]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "3,150,50,10,7,160,0.123457,0.900000,0.666667,1,30");
    }

    #[test]
    fn overwrite_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_report(&[outcome()], &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        write_report(&[outcome()], &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
        let err = write_report(&[], dir.path().join("missing/r.csv")).unwrap_err();
        assert!(err.to_string().contains("missing"));
    }
}
