//! Optimisers and the per-epoch update driver.

mod first_order;
pub mod metrics;
pub mod objective;
mod second_order;

pub use first_order::{adam_update, sgd_update, AdamConfig, AdamState, MomentumState};
pub use objective::{
    accumulate_gradient, batch_loss, evaluate_set, BatchGradient, CurvatureBatch, SetMetrics,
};
pub use second_order::{
    compute_candidates, hf_update, ng_update, nghf_update, outer_curvature, second_order_update,
    SecondOrderStep,
};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cg::{CgConfig, CgStop, CgTraceRecord};
use crate::data::Utterance;
use crate::distrib::WorkerPool;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::ModelSpec;
use crate::param::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Hf,
    Ng,
    #[default]
    Nghf,
}

impl OptimizerKind {
    pub fn uses_cg(self) -> bool {
        matches!(
            self,
            OptimizerKind::Hf | OptimizerKind::Ng | OptimizerKind::Nghf
        )
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Hf => "hf",
            OptimizerKind::Ng => "ng",
            OptimizerKind::Nghf => "nghf",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "hf" => Ok(OptimizerKind::Hf),
            "ng" => Ok(OptimizerKind::Ng),
            "nghf" => Ok(OptimizerKind::Nghf),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CurvatureKind {
    GaussNewton,
    Fisher,
}

impl fmt::Display for CurvatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurvatureKind::GaussNewton => "gn",
            CurvatureKind::Fisher => "fisher",
        })
    }
}

impl FromStr for CurvatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gn" | "gauss-newton" => Ok(CurvatureKind::GaussNewton),
            "fisher" | "f" => Ok(CurvatureKind::Fisher),
            other => Err(Error::Config(format!("unknown curvature `{other}`"))),
        }
    }
}

/// Data used to choose among CG candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SelectionSet {
    #[default]
    CgBatch,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Scale of the Fisher system, `λF Δθ = -∇L`.
    pub lambda: f64,
    /// Inner Fisher iterations of NGHF; 0 reduces NGHF to HF.
    pub inner_ng_iters: usize,
    pub cg: CgConfig,
    /// Replaces the outer curvature of HF/NG/NGHF (ablation hook).
    pub curvature: Option<CurvatureKind>,
    /// Utterances per SGD/Adam step.
    pub gradient_batch_size: usize,
    pub cg_batch_size: usize,
    /// Gradient batches per epoch for the CG methods.
    pub updates_per_epoch: usize,
    pub select_on: SelectionSet,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Nghf,
            learning_rate: 0.01,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lambda: 1.0,
            inner_ng_iters: 4,
            cg: CgConfig::default(),
            curvature: None,
            gradient_batch_size: 1,
            cg_batch_size: 20,
            updates_per_epoch: 8,
            select_on: SelectionSet::CgBatch,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        self.cg.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.gradient_batch_size == 0 || self.cg_batch_size == 0 || self.updates_per_epoch == 0 {
            return bad("batch sizes and updates_per_epoch must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "need learning_rate > 0 and momentum in [0, 1), got {} and {}",
                self.learning_rate, self.momentum
            ));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0)
        {
            return bad("adam needs beta1, beta2 in [0, 1) and epsilon > 0".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Wall times in milliseconds. `grad_ms`, `cg_ms` and `eval_ms` are wall
/// clock on the driver; the others are per-utterance work summed over
/// workers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub grad_ms: f64,
    /// Whole CG stage, candidate evaluation included.
    pub cg_ms: f64,
    /// Candidate evaluation part of the CG stage.
    pub eval_ms: f64,
    pub rforward_ms: f64,
    pub ebp_ms: f64,
    pub eval_forward_ms: f64,
    pub eval_lattice_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct UpdateReport {
    pub epoch: usize,
    /// 1-based count over the whole run.
    pub update: usize,
    pub optimizer: OptimizerKind,
    /// Gradient-batch loss before the update.
    pub train_loss: f64,
    pub train_loss_after: Option<f64>,
    pub cg_batch_loss_before: Option<f64>,
    /// CG-batch loss at the chosen candidate.
    pub cg_batch_loss: Option<f64>,
    pub cg_iters: usize,
    /// Iteration of the chosen candidate; 0 when no update was applied or
    /// the fallback direction was used.
    pub chosen_m: usize,
    pub failed: bool,
    pub cg_stop: Option<CgStop>,
    pub inner_ng_failed: bool,
    /// `|Δθ·d_NG| / ‖d_NG‖` for NGHF.
    pub ng_projection: Option<f64>,
    pub skipped_utterances: usize,
    pub cg_trace: Vec<CgTraceRecord>,
    pub times: StageTimes,
}

impl UpdateReport {
    /// The report without timings, for trajectory comparisons.
    pub fn without_times(&self) -> Self {
        Self {
            times: StageTimes::default(),
            ..self.clone()
        }
    }
}

/// Optimiser state that persists across epochs.
#[derive(Debug)]
pub struct Trainer {
    pub model: ModelSpec,
    pub params: ParamVector,
    pub cfg: OptimizerConfig,
    pub loss: LossConfig,
    pool: WorkerPool,
    rng: ChaCha8Rng,
    momentum: MomentumState,
    adam: AdamState,
    updates: usize,
    epochs: usize,
}

impl Trainer {
    pub fn new(
        model: ModelSpec,
        params: ParamVector,
        cfg: OptimizerConfig,
        loss: LossConfig,
        workers: usize,
        seed: u64,
    ) -> Result<Self> {
        model.validate()?;
        cfg.validate()?;
        crate::error::check_dim("parameters", model.num_params(), params.len())?;
        Ok(Self {
            model,
            params,
            cfg,
            loss,
            pool: WorkerPool::new(workers)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            momentum: MomentumState::default(),
            adam: AdamState::default(),
            updates: 0,
            epochs: 0,
        })
    }

    pub fn pool(&self) -> &WorkerPool {
        &self.pool
    }

    pub fn updates_done(&self) -> usize {
        self.updates
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs
    }

    pub fn evaluate(&self, utts: &[Utterance]) -> Result<SetMetrics> {
        let refs: Vec<&Utterance> = utts.iter().collect();
        evaluate_set(&self.model, &self.params, &refs, &self.loss, &self.pool)
    }

    /// One epoch: a seeded shuffle, then either mini-batch steps (SGD, Adam)
    /// or `updates_per_epoch` gradient batches, each with a freshly sampled
    /// CG batch (HF, NG, NGHF).
    pub fn run_epoch(
        &mut self,
        train: &[Utterance],
        valid: Option<&[Utterance]>,
    ) -> Result<Vec<UpdateReport>> {
        self.run_epoch_with(train, valid, |_, _| Ok(true))
    }

    /// As [`Trainer::run_epoch`] but stops after `max_updates` updates.
    pub fn run_epoch_limited(
        &mut self,
        train: &[Utterance],
        valid: Option<&[Utterance]>,
        max_updates: usize,
    ) -> Result<Vec<UpdateReport>> {
        if max_updates == 0 {
            return Ok(Vec::new());
        }
        let mut left = max_updates;
        self.run_epoch_with(train, valid, |_, _| {
            left -= 1;
            Ok(left > 0)
        })
    }

    /// As [`Trainer::run_epoch`], calling `after` with the new parameters
    /// after every update; the epoch ends early once it returns `false`.
    pub fn run_epoch_with(
        &mut self,
        train: &[Utterance],
        valid: Option<&[Utterance]>,
        mut after: impl FnMut(&ParamVector, &UpdateReport) -> Result<bool>,
    ) -> Result<Vec<UpdateReport>> {
        if train.is_empty() {
            return Err(Error::Empty("training set"));
        }
        self.epochs += 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let batches: Vec<Vec<usize>> = if self.cfg.kind.uses_cg() {
            partition(&order, self.cfg.updates_per_epoch)
        } else {
            order
                .chunks(self.cfg.gradient_batch_size)
                .map(<[usize]>::to_vec)
                .collect()
        };
        let valid_refs: Option<Vec<&Utterance>> = match (self.cfg.select_on, valid) {
            (SelectionSet::Validation, Some(v)) if !v.is_empty() => Some(v.iter().collect()),
            (SelectionSet::Validation, _) => {
                return Err(Error::Config(
                    "select_on=valid needs a validation split".into(),
                ))
            }
            _ => None,
        };
        let mut reports = Vec::new();
        for batch in batches {
            let gb: Vec<&Utterance> = batch.iter().map(|&i| &train[i]).collect();
            let mut report = if self.cfg.kind.uses_cg() {
                let k = self.cfg.cg_batch_size.min(train.len());
                let cg: Vec<&Utterance> = rand::seq::index::sample(&mut self.rng, train.len(), k)
                    .into_iter()
                    .map(|i| &train[i])
                    .collect();
                second_order_update(
                    self.cfg.kind,
                    &self.model,
                    &mut self.params,
                    &gb,
                    &cg,
                    valid_refs.as_deref(),
                    &self.loss,
                    &self.cfg,
                    &self.pool,
                )?
            } else {
                self.first_order_step(&gb)?
            };
            self.updates += 1;
            report.epoch = self.epochs;
            report.update = self.updates;
            let go_on = after(&self.params, &report)?;
            reports.push(report);
            if !go_on {
                break;
            }
        }
        Ok(reports)
    }

    fn first_order_step(&mut self, batch: &[&Utterance]) -> Result<UpdateReport> {
        let t0 = Instant::now();
        let grad =
            match accumulate_gradient(&self.model, &self.params, batch, &self.loss, &self.pool) {
                Ok(g) => g,
                Err(Error::FailedUpdate(_)) => {
                    return Ok(UpdateReport {
                        optimizer: self.cfg.kind,
                        train_loss: f64::NAN,
                        failed: true,
                        skipped_utterances: batch.len(),
                        ..UpdateReport::default()
                    })
                }
                Err(e) => return Err(e),
            };
        let g = grad.gradient.as_slice();
        self.params = match self.cfg.kind {
            OptimizerKind::Sgd => sgd_update(
                &self.params,
                g,
                self.cfg.learning_rate,
                self.cfg.momentum,
                &mut self.momentum,
            ),
            OptimizerKind::Adam => adam_update(&self.params, g, &mut self.adam, &self.cfg.adam()),
            other => {
                return Err(Error::Config(format!(
                    "{other} is not a first-order method"
                )))
            }
        };
        Ok(UpdateReport {
            optimizer: self.cfg.kind,
            train_loss: grad.loss,
            skipped_utterances: grad.failures.len(),
            times: StageTimes {
                grad_ms: t0.elapsed().as_secs_f64() * 1e3,
                ..StageTimes::default()
            },
            ..UpdateReport::default()
        })
    }
}

/// Splits `order` into `parts` contiguous, nearly equal batches (larger ones
/// first); never yields an empty batch.
pub fn partition(order: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let parts = parts.clamp(1, order.len().max(1));
    let base = order.len() / parts;
    let extra = order.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    out
}
