//! CSV logs written during training and evaluation.
//!
//! Floats are written in shortest round-trip form, so reading a log back
//! reproduces the in-memory values exactly.

use std::fs::File;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::IterationStats;

pub const LEARNING_CURVE_FILE: &str = "learning_curve.csv";
pub const EVAL_FILE: &str = "eval.csv";

/// One optimizer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: u64,
    pub total_rollouts: u64,
    pub total_env_steps: u64,
    pub mean_return: f64,
    pub max_return: f64,
    pub min_return: f64,
    /// Empty unless wall-time logging is enabled.
    pub wall_time_s: Option<f64>,
}

impl CurveRow {
    pub fn new(stats: &IterationStats, wall_time_s: Option<f64>) -> Self {
        Self {
            iteration: stats.iteration,
            total_rollouts: stats.total_rollouts,
            total_env_steps: stats.total_env_steps,
            mean_return: stats.mean_return,
            max_return: stats.max_return,
            min_return: stats.min_return,
            wall_time_s,
        }
    }
}

/// One periodic evaluation during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iteration: u64,
    pub total_rollouts: u64,
    pub mean_return: f64,
    pub mean_tracking_error: Option<f64>,
    pub fall_rate: f64,
}

/// One evaluation episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub seed: u64,
    pub episode_return: f64,
    pub length: usize,
    pub tracking_error: Option<f64>,
    pub fell: bool,
    pub duration_s: f64,
}

/// Column names of a log row type.
pub trait Columns {
    const HEADER: &'static [&'static str];
}

impl Columns for CurveRow {
    const HEADER: &'static [&'static str] = &[
        "iteration",
        "total_rollouts",
        "total_env_steps",
        "mean_return",
        "max_return",
        "min_return",
        "wall_time_s",
    ];
}

impl Columns for EvalRow {
    const HEADER: &'static [&'static str] =
        &["iteration", "total_rollouts", "mean_return", "mean_tracking_error", "fall_rate"];
}

impl Columns for EpisodeRow {
    const HEADER: &'static [&'static str] =
        &["seed", "episode_return", "length", "tracking_error", "fell", "duration_s"];
}

/// Append-only CSV writer that flushes after every row, so a crashed run
/// leaves a readable prefix. The header is written on creation, so a run
/// with no rows still produces a well-formed file.
pub struct CsvLog {
    writer: csv::Writer<File>,
}

impl CsvLog {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        writer.write_record(header)?;
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self { writer })
    }

    pub fn append<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush().map_err(|e| Error::io("<csv log>", e))
    }
}

/// Write `rows` to `path`, replacing it.
pub fn write_rows<T: Serialize + Columns>(path: &Path, rows: &[T]) -> Result<()> {
    let mut log = CsvLog::create(path, T::HEADER)?;
    for r in rows {
        log.append(r)?;
    }
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Write a numeric trace with a fixed header.
pub fn write_trace(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_rows_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LEARNING_CURVE_FILE);
        let rows = vec![
            CurveRow {
                iteration: 1,
                total_rollouts: 16,
                total_env_steps: 6400,
                mean_return: -123.456_789_012_345_67,
                max_return: 0.1 + 0.2,
                min_return: -1e-300,
                wall_time_s: None,
            },
            CurveRow {
                iteration: 2,
                total_rollouts: 32,
                total_env_steps: 12800,
                mean_return: std::f64::consts::PI,
                max_return: 1e17,
                min_return: -0.0,
                wall_time_s: Some(1.25),
            },
        ];
        write_rows(&path, &rows).unwrap();
        let back: Vec<CurveRow> = read_rows(&path).unwrap();
        assert_eq!(back, rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "iteration,total_rollouts,total_env_steps,mean_return,max_return,min_return,wall_time_s\n"
        ));
    }

    #[test]
    fn empty_log_still_has_a_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(EVAL_FILE);
        write_rows::<EvalRow>(&path, &[]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "iteration,total_rollouts,mean_return,mean_tracking_error,fall_rate\n"
        );
        assert!(read_rows::<EvalRow>(&path).unwrap().is_empty());
    }

    #[test]
    fn trace_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace(&path, &["t", "v"], &[vec![0.0, 1.5], vec![0.01, 1.25]]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "t,v\n0,1.5\n0.01,1.25\n");
    }
}
