//! Line-delimited JSON logs and CSV tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use lgnet_core::metrics::MetricsReport;
use lgnet_core::trainer::EpochRecord;
use serde::Serialize;

use crate::csv_io::write_table;
use crate::error::AppError;

#[derive(Serialize)]
struct EpochLine {
    epoch: usize,
    forecast_loss: f64,
    adversarial_loss: Option<f64>,
    critic_loss: Option<f64>,
    val_rmse: Option<f64>,
    val_mae: Option<f64>,
}

pub fn epoch_json(r: &EpochRecord) -> String {
    serde_json::to_string(&EpochLine {
        epoch: r.epoch,
        forecast_loss: r.forecast_loss,
        adversarial_loss: r.adversarial_loss,
        critic_loss: r.critic_loss,
        val_rmse: r.val_rmse,
        val_mae: r.val_mae,
    })
    .expect("plain record serializes")
}

pub fn write_epoch_log(path: &Path, log: &[EpochRecord]) -> Result<(), AppError> {
    let f = File::create(path).map_err(|e| AppError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in log {
        writeln!(w, "{}", epoch_json(r)).map_err(|e| AppError::io(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// Appends one JSON object per line.
pub fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), AppError> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("plain record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| AppError::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Per-step rows followed by an `all` row.
pub fn metrics_rows(report: &MetricsReport, horizon: Option<usize>) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = report
        .per_step
        .iter()
        .enumerate()
        .filter(|(i, _)| horizon.map_or(true, |h| h == i + 1))
        .map(|(i, s)| vec![(i + 1).to_string(), opt(s.rmse), opt(s.mae), s.cells.to_string()])
        .collect();
    if horizon.is_none() {
        rows.push(vec!["all".into(), report.rmse.to_string(), report.mae.to_string(), report.observed_cells.to_string()]);
    }
    rows
}

pub const METRICS_HEADER: [&str; 4] = ["step", "rmse", "mae", "cells"];

pub fn write_metrics(path: &Path, report: &MetricsReport, horizon: Option<usize>) -> Result<(), AppError> {
    write_table(path, &METRICS_HEADER, &metrics_rows(report, horizon))
}

/// Fixed-width rendering of [`metrics_rows`] for the terminal.
pub fn render_metrics(report: &MetricsReport, horizon: Option<usize>) -> String {
    let mut s = format!("{:>5} {:>14} {:>14} {:>8}\n", "step", "rmse", "mae", "cells");
    for r in metrics_rows(report, horizon) {
        let num = |x: &str| x.parse::<f64>().map_or_else(|_| x.to_owned(), |v| format!("{v:.6}"));
        s.push_str(&format!("{:>5} {:>14} {:>14} {:>8}\n", r[0], num(&r[1]), num(&r[2]), r[3]));
    }
    s
}
