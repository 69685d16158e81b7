//! HF, NG and NGHF updates: a gradient stage over the gradient batch, then CG
//! on a curvature system built from the CG batch, then candidate selection.

use std::time::Instant;

use crate::cg::{
    cg_run, precondition, select_update, CgConfig, CgOutcome, CgStop, UpdateCandidate,
};
use crate::data::Utterance;
use crate::distrib::WorkerPool;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::{share_counts, ModelSpec};
use crate::param::{dot, norm, ParamVector};

use super::objective::{
    accumulate_gradient, batch_loss, BatchGradient, CurvatureBatch, ProductTiming,
};
use super::{CurvatureKind, OptimizerConfig, OptimizerKind, StageTimes, UpdateReport};

/// Right-hand side and CG output of one second-order update.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderStep {
    /// The CG right-hand side: `-∇L`, or the NG direction for NGHF.
    pub b: Vec<f64>,
    pub outcome: CgOutcome,
    /// The inner Fisher solve of NGHF, when it ran.
    pub inner: Option<CgOutcome>,
    pub inner_failed: bool,
}

/// Curvature used by the outer CG of `method`, honouring the ablation
/// override in `cfg.curvature`.
pub fn outer_curvature(method: OptimizerKind, cfg: &OptimizerConfig) -> CurvatureKind {
    cfg.curvature.unwrap_or(match method {
        OptimizerKind::Ng => CurvatureKind::Fisher,
        _ => CurvatureKind::GaussNewton,
    })
}

fn system_scale(kind: CurvatureKind, cfg: &OptimizerConfig) -> f64 {
    match kind {
        CurvatureKind::Fisher => cfg.lambda,
        CurvatureKind::GaussNewton => 1.0,
    }
}

/// Runs the CG stage(s) of `method` from an accumulated gradient.
pub fn compute_candidates(
    method: OptimizerKind,
    params: &ParamVector,
    grad: &BatchGradient,
    curv: &CurvatureBatch<'_>,
    cfg: &OptimizerConfig,
    pool: &WorkerPool,
    timing: &mut ProductTiming,
) -> Result<SecondOrderStep> {
    if !method.uses_cg() {
        return Err(Error::Config(format!("{method} has no CG stage")));
    }
    let counts = share_counts(curv.model());
    let theta = params.as_slice();
    let mut product = |kind: CurvatureKind, v: &[f64]| -> Result<Vec<f64>> {
        let (bv, t) = curv.product(kind, system_scale(kind, cfg), v, pool)?;
        timing.rforward_ms += t.rforward_ms;
        timing.ebp_ms += t.ebp_ms;
        Ok(bv)
    };

    let mut b: Vec<f64> = grad.raw.iter().map(|g| -g).collect();
    let mut inner = None;
    let mut inner_failed = false;
    if method == OptimizerKind::Nghf && cfg.inner_ng_iters > 0 {
        let icfg = CgConfig {
            max_iters: cfg.inner_ng_iters,
            ..cfg.cg.clone()
        };
        let out = cg_run(
            &b,
            theta,
            |v| product(CurvatureKind::Fisher, v),
            &counts,
            &icfg,
        )?;
        match out.candidates.last() {
            Some(c) if out.stop != CgStop::NonFinite => b = c.delta.clone(),
            _ => inner_failed = true,
        }
        inner = Some(out);
    }
    let kind = outer_curvature(method, cfg);
    let outcome = cg_run(&b, theta, |v| product(kind, v), &counts, &cfg.cg)?;
    Ok(SecondOrderStep {
        b,
        outcome,
        inner,
        inner_failed,
    })
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn failed_report(
    method: OptimizerKind,
    train_loss: f64,
    skipped: usize,
    times: StageTimes,
) -> UpdateReport {
    UpdateReport {
        optimizer: method,
        train_loss,
        train_loss_after: Some(train_loss),
        skipped_utterances: skipped,
        failed: true,
        times,
        ..UpdateReport::default()
    }
}

/// One complete second-order update. `eval_batch` replaces the CG batch for
/// candidate selection when given. On failure `params` is left unchanged.
#[allow(clippy::too_many_arguments)]
pub fn second_order_update(
    method: OptimizerKind,
    model: &ModelSpec,
    params: &mut ParamVector,
    gradient_batch: &[&Utterance],
    cg_batch: &[&Utterance],
    eval_batch: Option<&[&Utterance]>,
    loss: &LossConfig,
    cfg: &OptimizerConfig,
    pool: &WorkerPool,
) -> Result<UpdateReport> {
    let mut times = StageTimes::default();
    let t_grad = Instant::now();
    let grad = match accumulate_gradient(model, params, gradient_batch, loss, pool) {
        Ok(g) => g,
        Err(Error::FailedUpdate(_)) => {
            times.grad_ms = ms(t_grad);
            return Ok(failed_report(method, f64::NAN, gradient_batch.len(), times));
        }
        Err(e) => return Err(e),
    };
    times.grad_ms = ms(t_grad);
    let skipped = grad.failures.len();

    let t_cg = Instant::now();
    let snapshot = params.clone();
    let curv = match CurvatureBatch::build(model, &snapshot, cg_batch, loss, pool) {
        Ok(c) => c,
        Err(Error::FailedUpdate(_)) => {
            times.cg_ms = ms(t_cg);
            return Ok(failed_report(method, grad.loss, skipped, times));
        }
        Err(e) => return Err(e),
    };
    let mut pt = ProductTiming::default();
    let step = compute_candidates(method, &snapshot, &grad, &curv, cfg, pool, &mut pt)?;
    times.rforward_ms = pt.rforward_ms;
    times.ebp_ms = pt.ebp_ms;

    let eval_set: Vec<&Utterance> = match eval_batch {
        Some(e) => e.to_vec(),
        None => curv.utterances(),
    };
    let t_eval = Instant::now();
    let base_loss = match eval_batch {
        Some(e) => {
            let (l, t) = batch_loss(model, &snapshot, e, loss, pool)?;
            times.eval_forward_ms += t.forward_ms;
            times.eval_lattice_ms += t.lattice_ms;
            l
        }
        None => curv.base_loss,
    };

    let mut candidates = step.outcome.candidates.clone();
    if candidates.is_empty() {
        // No usable curvature: fall back to the (preconditioned) right-hand side.
        let counts = share_counts(model);
        let delta = if cfg.cg.precondition {
            precondition(&step.b, &counts)
        } else {
            step.b.clone()
        };
        candidates.push(UpdateCandidate {
            iteration: 0,
            delta,
            quad_value: 0.0,
            eval_loss: None,
        });
    }
    let mut evaluate = |d: &[f64]| -> Result<f64> {
        let p = snapshot.plus_scaled(1.0, d)?;
        if !p.is_finite() {
            return Err(Error::NonFinite("candidate parameters"));
        }
        let (l, t) = batch_loss(model, &p, &eval_set, loss, pool)?;
        times.eval_forward_ms += t.forward_ms;
        times.eval_lattice_ms += t.lattice_ms;
        Ok(l)
    };
    let selected = select_update(&mut candidates, &mut evaluate, cfg.cg.eval_every);
    let chosen = match selected {
        Ok(i) => {
            if candidates[i].eval_loss.is_none() {
                let l = match evaluate(&candidates[i].delta) {
                    Ok(l) => l,
                    Err(Error::NonFinite(_)) => f64::NAN,
                    Err(e) => return Err(e),
                };
                candidates[i].eval_loss = Some(l);
            }
            Some(i)
        }
        Err(Error::FailedUpdate(_)) => None,
        Err(e) => return Err(e),
    };
    times.eval_ms = ms(t_eval);

    let mut trace = step.outcome.trace.clone();
    for c in &candidates {
        if let Some(rec) = trace.iter_mut().find(|r| r.iteration == c.iteration) {
            rec.eval_loss = c.eval_loss;
        }
    }

    let accepted = chosen.filter(|&i| {
        candidates[i]
            .eval_loss
            .is_some_and(|l| l.is_finite() && l <= base_loss)
    });
    let mut report = UpdateReport {
        optimizer: method,
        train_loss: grad.loss,
        cg_batch_loss_before: Some(base_loss),
        cg_batch_loss: Some(base_loss),
        cg_iters: step.outcome.iterations(),
        cg_stop: Some(step.outcome.stop),
        inner_ng_failed: step.inner_failed,
        skipped_utterances: skipped,
        cg_trace: trace,
        failed: accepted.is_none(),
        ..UpdateReport::default()
    };
    if let Some(i) = accepted {
        let c = &candidates[i];
        report.chosen_m = c.iteration;
        report.cg_batch_loss = c.eval_loss;
        if method == OptimizerKind::Nghf && step.inner.is_some() && !step.inner_failed {
            let nb = norm(&step.b);
            if nb > 0.0 {
                report.ng_projection = Some(dot(&c.delta, &step.b).abs() / nb);
            }
        }
        *params = snapshot.plus_scaled(1.0, &c.delta)?;
    }
    drop(curv);
    times.cg_ms = ms(t_cg);

    report.train_loss_after = Some(if report.failed {
        grad.loss
    } else {
        batch_loss(model, params, gradient_batch, loss, pool)
            .map(|(l, _)| l)
            .unwrap_or(f64::NAN)
    });
    report.times = times;
    Ok(report)
}

macro_rules! method_update {
    ($(#[$doc:meta])* $name:ident, $kind:expr) => {
        $(#[$doc])*
        pub fn $name(
            model: &ModelSpec,
            params: &mut ParamVector,
            gradient_batch: &[&Utterance],
            cg_batch: &[&Utterance],
            loss: &LossConfig,
            cfg: &OptimizerConfig,
            pool: &WorkerPool,
        ) -> Result<UpdateReport> {
            second_order_update($kind, model, params, gradient_batch, cg_batch, None, loss, cfg, pool)
        }
    };
}

method_update!(
    /// Hessian-free update: CG on the Gauss-Newton system with `b = -∇L`.
    hf_update,
    OptimizerKind::Hf
);
method_update!(
    /// Natural-gradient update: CG on `λF Δθ = -∇L`.
    ng_update,
    OptimizerKind::Ng
);
method_update!(
    /// NGHF update: a short Fisher solve gives the NG direction, which then
    /// seeds CG on the Gauss-Newton system.
    nghf_update,
    OptimizerKind::Nghf
);
