//! Synchronous map-reduce over utterances.
//!
//! Each item is mapped independently on a thread pool; the partials are then
//! folded on the calling thread in key order, so totals do not depend on the
//! worker count or on completion order.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-item output: a vector summed elementwise and a few scalars summed
/// alongside it (loss, counts, accuracies).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Partial {
    pub vector: Vec<f64>,
    pub scalars: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub key: String,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorkerResult {
    pub sum: Vec<f64>,
    pub scalars: Vec<f64>,
    /// Items that contributed.
    pub count: usize,
    pub failures: Vec<Failure>,
}

impl WorkerResult {
    pub fn failure_rate(&self) -> f64 {
        let total = self.count + self.failures.len();
        if total == 0 {
            0.0
        } else {
            self.failures.len() as f64 / total as f64
        }
    }
}

/// Left fold of `(key, partial)` pairs in ascending key order, accumulating
/// in f64. Equal keys keep their input order.
pub fn deterministic_reduce(mut partials: Vec<(String, Partial)>) -> Result<WorkerResult> {
    partials.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = WorkerResult::default();
    for (_, p) in partials {
        if out.count == 0 {
            out.sum = p.vector;
            out.scalars = p.scalars;
        } else {
            if p.vector.len() != out.sum.len() || p.scalars.len() != out.scalars.len() {
                return Err(Error::DimensionMismatch {
                    context: "partial result",
                    expected: out.sum.len(),
                    actual: p.vector.len(),
                });
            }
            for (s, x) in out.sum.iter_mut().zip(&p.vector) {
                *s += x;
            }
            for (s, x) in out.scalars.iter_mut().zip(&p.scalars) {
                *s += x;
            }
        }
        out.count += 1;
    }
    Ok(out)
}

pub struct WorkerPool {
    num_workers: usize,
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerPool")
            .field("num_workers", &self.num_workers)
            .finish()
    }
}

impl WorkerPool {
    pub fn new(num_workers: usize) -> Result<Self> {
        if num_workers == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        let pool = if num_workers == 1 {
            None
        } else {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(num_workers)
                    .thread_name(|i| format!("nghf-worker-{i}"))
                    .build()
                    .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?,
            )
        };
        Ok(Self { num_workers, pool })
    }

    pub fn num_workers(&self) -> usize {
        self.num_workers
    }

    /// Order-preserving map; errors and panics stay in place.
    pub fn map_indexed<T: Sync, R: Send>(
        &self,
        items: &[T],
        work: impl Fn(&T) -> Result<R> + Sync,
    ) -> Vec<(usize, Result<R>)> {
        let run = |(i, item): (usize, &T)| -> (usize, Result<R>) {
            let res = match catch_unwind(AssertUnwindSafe(|| work(item))) {
                Ok(r) => r,
                Err(panic) => Err(Error::Worker(panic_message(panic.as_ref()))),
            };
            (i, res)
        };
        match &self.pool {
            None => items.iter().enumerate().map(run).collect(),
            Some(pool) => pool.install(|| items.par_iter().enumerate().map(run).collect()),
        }
    }

    /// Maps `work` over `items` and reduces the successes by key. Errors and
    /// panics are recorded as failures and the item is skipped.
    pub fn map_reduce<T: Sync>(
        &self,
        items: &[T],
        key: impl Fn(&T) -> String + Sync,
        work: impl Fn(&T) -> Result<Partial> + Sync,
    ) -> Result<WorkerResult> {
        let run = |item: &T| -> (String, std::result::Result<Partial, String>) {
            let k = key(item);
            let res = match catch_unwind(AssertUnwindSafe(|| work(item))) {
                Ok(Ok(p)) => Ok(p),
                Ok(Err(e)) => Err(e.to_string()),
                Err(panic) => Err(panic_message(panic.as_ref())),
            };
            (k, res)
        };
        let mapped: Vec<(String, std::result::Result<Partial, String>)> = match &self.pool {
            None => items.iter().map(run).collect(),
            Some(pool) => pool.install(|| items.par_iter().map(run).collect()),
        };
        let mut partials = Vec::with_capacity(mapped.len());
        let mut failures = Vec::new();
        for (key, res) in mapped {
            match res {
                Ok(p) => partials.push((key, p)),
                Err(msg) => failures.push(Failure { key, msg }),
            }
        }
        let mut out = deterministic_reduce(partials)?;
        failures.sort_by(|a, b| a.key.cmp(&b.key));
        out.failures = failures;
        Ok(out)
    }
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        format!("worker panicked: {s}")
    } else if let Some(s) = p.downcast_ref::<String>() {
        format!("worker panicked: {s}")
    } else {
        "worker panicked".into()
    }
}
