//! Flat parameter vectors and the small amount of dense linear algebra the
//! optimisers need on them.
//!
//! Everything shaped like the model parameters (gradients, CG directions,
//! residuals, updates) is a [`ParamVector`]. Values are always stored and
//! reduced in `f64`; the precision tag only selects the arithmetic used inside
//! the network passes.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{check_dim, Error, Result};

/// Arithmetic used for activations and directional derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{other}`"))),
        }
    }
}

/// Flat vector of all model parameters in the canonical layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub precision: Precision,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, precision: Precision) -> Self {
        Self { values, precision }
    }

    pub fn zeros(len: usize, precision: Precision) -> Self {
        Self::new(vec![0.0; len], precision)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    /// `self + scale * other`, as a new vector.
    pub fn plus_scaled(&self, scale: f64, other: &[f64]) -> Result<Self> {
        check_dim("parameter update", self.len(), other.len())?;
        let mut out = self.values.clone();
        axpy(scale, other, &mut out);
        Ok(Self::new(out, self.precision))
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self::new(values, self.precision)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scaled(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

/// Relative L2 error of `approx` against `reference`.
pub fn rel_err(approx: &[f64], reference: &[f64]) -> f64 {
    let diff: f64 = approx
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r) * (a - r))
        .sum::<f64>()
        .sqrt();
    let denom = norm(reference);
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}

/// Row-major `rows x cols` matrix holding one vector per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FrameMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("frame matrix", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("frame row", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn map_rows(&self, mut f: impl FnMut(usize, &[f64]) -> Vec<f64>) -> Result<Self> {
        let mut out = Vec::with_capacity(self.data.len());
        let mut cols = None;
        for t in 0..self.rows {
            let r = f(t, self.row(t));
            match cols {
                None => cols = Some(r.len()),
                Some(c) => check_dim("mapped row", c, r.len())?,
            }
            out.extend(r);
        }
        Self::from_vec(self.rows, cols.unwrap_or(self.cols), out)
    }
}
