//! CSV outputs of a training run.
//!
//! * `metrics.csv`: one row per update, columns of [`MetricsRow`].
//! * `stages.csv`: per-update work split of the CG stage ([`StageRow`]).
//! * `cg_trace.csv`: one row per CG iteration ([`TraceRow`]).

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{OptimizerKind, UpdateReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub update: usize,
    pub optimizer: OptimizerKind,
    pub train_loss: f64,
    pub cg_batch_loss: Option<f64>,
    /// Validation MPE accuracy, filled on the last update of an epoch.
    pub valid_metric: Option<f64>,
    pub cg_iters: usize,
    pub chosen_m: usize,
    pub wall_ms_grad: f64,
    pub wall_ms_cg: f64,
    pub wall_ms_eval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub epoch: usize,
    pub update: usize,
    pub rforward_ms: f64,
    pub ebp_ms: f64,
    pub eval_forward_ms: f64,
    pub eval_lattice_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub update: usize,
    pub iteration: usize,
    pub alpha: f64,
    pub beta: f64,
    pub residual_norm: f64,
    pub quad_value: f64,
    pub eval_loss: Option<f64>,
}

impl MetricsRow {
    pub fn from_report(r: &UpdateReport, valid_metric: Option<f64>) -> Self {
        Self {
            epoch: r.epoch,
            update: r.update,
            optimizer: r.optimizer,
            train_loss: r.train_loss,
            cg_batch_loss: r.cg_batch_loss,
            valid_metric,
            cg_iters: r.cg_iters,
            chosen_m: r.chosen_m,
            wall_ms_grad: r.times.grad_ms,
            wall_ms_cg: r.times.cg_ms,
            wall_ms_eval: r.times.eval_ms,
        }
    }
}

impl StageRow {
    pub fn from_report(r: &UpdateReport) -> Self {
        Self {
            epoch: r.epoch,
            update: r.update,
            rforward_ms: r.times.rforward_ms,
            ebp_ms: r.times.ebp_ms,
            eval_forward_ms: r.times.eval_forward_ms,
            eval_lattice_ms: r.times.eval_lattice_ms,
        }
    }
}

pub fn trace_rows(r: &UpdateReport) -> Vec<TraceRow> {
    r.cg_trace
        .iter()
        .map(|t| TraceRow {
            epoch: r.epoch,
            update: r.update,
            iteration: t.iteration,
            alpha: t.alpha,
            beta: t.beta,
            residual_norm: t.residual_norm,
            quad_value: t.quad_value,
            eval_loss: t.eval_loss,
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends rows, writing the header only when the file is new or empty.
pub fn append_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path)
        .map(|m| m.len() == 0)
        .unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

/// Column names of `metrics.csv`, in order.
pub const METRICS_COLUMNS: [&str; 11] = [
    "epoch",
    "update",
    "optimizer",
    "train_loss",
    "cg_batch_loss",
    "valid_metric",
    "cg_iters",
    "chosen_m",
    "wall_ms_grad",
    "wall_ms_cg",
    "wall_ms_eval",
];
