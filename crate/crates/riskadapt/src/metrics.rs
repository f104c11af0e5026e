//! Metric records, CSV persistence, and a strict CSV reader.
//!
//! All files are flat CSV with documented headers plus a JSON summary per
//! run; floats are written with Rust's shortest round-trip formatting so
//! identical runs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ppo::IterationStats;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed CSV {path} at row {row}: {why}")]
    MalformedCsv {
        path: String,
        row: usize,
        why: String,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path, source: io::Error) -> MetricsError {
    MetricsError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Per-iteration stats
// ---------------------------------------------------------------------------

pub const STATS_HEADER: &str =
    "iteration,total_reward,tracking_reward,entropy,alpha,batch_cv,clip_fraction,critic_loss";

pub fn stats_csv(rows: &[IterationStats]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(STATS_HEADER);
    out.push('\n');
    for s in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.iteration,
            s.total_reward,
            s.tracking_reward,
            s.entropy,
            s.alpha,
            s.batch_cv,
            s.clip_fraction,
            s.critic_loss
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Evaluation metrics
// ---------------------------------------------------------------------------

/// One evaluation row: either a single target velocity or the aggregate over
/// the whole grid. `success_rate_drop` is populated by the disturbance
/// protocol (1 - success_with_force / success_without).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub risk_mode: String,
    pub seed: u64,
    pub row_kind: String,
    pub target_velocity: Option<f64>,
    pub ood: bool,
    pub success_rate: f64,
    pub x_rmse: f64,
    pub mean_return: f64,
    pub mean_cv: f64,
    pub success_rate_drop: Option<f64>,
}

pub const METRICS_HEADER: &str = "run_id,risk_mode,seed,row_kind,target_velocity,ood,success_rate,x_rmse,mean_return,mean_cv,success_rate_drop";

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.run_id,
            r.risk_mode,
            r.seed,
            r.row_kind,
            opt_f64(r.target_velocity),
            r.ood,
            r.success_rate,
            r.x_rmse,
            r.mean_return,
            r.mean_cv,
            opt_f64(r.success_rate_drop)
        );
    }
    out
}

pub fn write_metrics(
    dir: &Path,
    records: &[MetricsRecord],
) -> Result<(), MetricsError> {
    let csv_path = dir.join("metrics.csv");
    fs::write(&csv_path, metrics_csv(records)).map_err(|e| io_err(&csv_path, e))?;
    let json_path = dir.join("metrics.json");
    let json = serde_json::to_string_pretty(records)?;
    fs::write(&json_path, json + "\n").map_err(|e| io_err(&json_path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// CV traces
// ---------------------------------------------------------------------------

/// Uniform-dt time series of batch-mean uncertainty during an evaluation,
/// with the command deviation and the push-window flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSample {
    pub t_seconds: f64,
    pub mean_cv: f64,
    pub velocity_deviation: f64,
    pub push_active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CvTrace {
    pub dt: f64,
    pub samples: Vec<CvSample>,
}

pub const CVTRACE_HEADER: &str = "t_seconds,mean_cv,velocity_deviation,push_active";

pub fn cvtrace_csv(trace: &CvTrace) -> String {
    let mut out = String::new();
    out.push_str(CVTRACE_HEADER);
    out.push('\n');
    for s in &trace.samples {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.t_seconds,
            s.mean_cv,
            s.velocity_deviation,
            if s.push_active { 1 } else { 0 }
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Strict CSV reader
// ---------------------------------------------------------------------------

/// Parse a CSV file, requiring a header and rectangular rows. Row numbers in
/// errors are 1-based including the header.
pub fn read_csv_strict(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), MetricsError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = match lines.next() {
        Some(h) if !h.trim().is_empty() => h.split(',').map(str::to_string).collect(),
        _ => {
            return Err(MetricsError::MalformedCsv {
                path: path.display().to_string(),
                row: 1,
                why: "missing header".into(),
            })
        }
    };
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != header.len() {
            return Err(MetricsError::MalformedCsv {
                path: path.display().to_string(),
                row: idx + 2,
                why: format!("{} fields, header has {}", fields.len(), header.len()),
            });
        }
        rows.push(fields);
    }
    Ok((header, rows))
}

pub fn parse_f64(
    path: &Path,
    row: usize,
    field: &str,
    value: &str,
) -> Result<f64, MetricsError> {
    value.parse::<f64>().map_err(|_| MetricsError::MalformedCsv {
        path: path.display().to_string(),
        row,
        why: format!("field {field}: cannot parse `{value}` as a number"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_stats() -> Vec<IterationStats> {
        vec![
            IterationStats {
                iteration: 0,
                total_reward: 1.25,
                tracking_reward: 0.5,
                entropy: 1.41,
                alpha: 0.0,
                batch_cv: 0.3,
                clip_fraction: 0.05,
                critic_loss: 0.7,
            },
            IterationStats {
                iteration: 1,
                total_reward: 1.5,
                tracking_reward: 0.6,
                entropy: 1.40,
                alpha: -0.01,
                batch_cv: 0.28,
                clip_fraction: 0.06,
                critic_loss: 0.65,
            },
        ]
    }

    #[test]
    fn stats_csv_round_trips_through_strict_reader() {
        let dir = std::env::temp_dir().join("riskadapt_metrics_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("stats.csv");
        std::fs::write(&path, stats_csv(&sample_stats())).unwrap();
        let (header, rows) = read_csv_strict(&path).unwrap();
        assert_eq!(header.join(","), STATS_HEADER);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0][0], "0");
        let v = parse_f64(&path, 2, "total_reward", &rows[0][1]).unwrap();
        assert_eq!(v, 1.25);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn strict_reader_rejects_ragged_rows_with_row_number() {
        let dir = std::env::temp_dir().join("riskadapt_metrics_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ragged.csv");
        std::fs::write(&path, "a,b\n1,2\n3\n").unwrap();
        match read_csv_strict(&path) {
            Err(MetricsError::MalformedCsv { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected malformed csv, got {other:?}"),
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn metrics_csv_blank_optionals() {
        let rec = MetricsRecord {
            run_id: "r1".into(),
            risk_mode: "adaptive".into(),
            seed: 7,
            row_kind: "aggregate".into(),
            target_velocity: None,
            ood: false,
            success_rate: 0.9,
            x_rmse: 0.1,
            mean_return: 400.0,
            mean_cv: 0.2,
            success_rate_drop: None,
        };
        let csv = metrics_csv(&[rec]);
        let line = csv.lines().nth(1).unwrap();
        assert!(line.starts_with("r1,adaptive,7,aggregate,,false,"));
        assert!(line.ends_with(','));
    }

    #[test]
    fn identical_stats_produce_identical_bytes() {
        assert_eq!(stats_csv(&sample_stats()), stats_csv(&sample_stats()));
    }
}
