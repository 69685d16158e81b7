//! Per-utterance objectives and their batch reductions over the worker pool.

use std::time::Instant;

use crate::data::Utterance;
use crate::distrib::{Failure, Partial, WorkerPool};
use crate::error::{Error, Result};
use crate::lattice::{forward_backward, log_softmax_rows, mpe_stats};
use crate::loss::{
    ce_loss_and_grad, ce_output_hessian_product, fisher_output_product, mbr_output_hessian_product,
    mmi_loss_and_occupancy, mpe_loss_and_occupancy, softmax_rows, LossConfig, LossKind,
};
use crate::model::{backprop, forward, r_forward, ActivationTape, ModelSpec};
use crate::param::{FrameMatrix, ParamVector};

use super::CurvatureKind;

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Loss value and logit gradient of one utterance.
pub struct UttObjective {
    pub loss: f64,
    pub output_grad: FrameMatrix,
    pub curvature: OutputCurvature,
}

/// Per-frame quantities that define the output-layer curvature products.
pub enum OutputCurvature {
    Ce {
        y: FrameMatrix,
    },
    Mmi {
        gamma_den: FrameMatrix,
        gamma_mmi: FrameMatrix,
        kappa: f64,
    },
    Mpe {
        gamma: FrameMatrix,
        gamma_mpe: FrameMatrix,
        gamma_mmi: FrameMatrix,
        kappa: f64,
    },
}

impl OutputCurvature {
    /// Gauss-Newton output product for frame `t`.
    fn gauss_newton(&self, t: usize, r: &[f64]) -> Vec<f64> {
        match self {
            OutputCurvature::Ce { y } => ce_output_hessian_product(y.row(t), r),
            OutputCurvature::Mmi {
                gamma_den, kappa, ..
            } => {
                let k2 = kappa * kappa;
                ce_output_hessian_product(gamma_den.row(t), r)
                    .into_iter()
                    .map(|x| k2 * x)
                    .collect()
            }
            OutputCurvature::Mpe {
                gamma,
                gamma_mpe,
                kappa,
                ..
            } => mbr_output_hessian_product(gamma.row(t), gamma_mpe.row(t), r, *kappa),
        }
    }

    /// Empirical Fisher output product for frame `t`. Lattice losses use the
    /// MMI occupancies; CE uses its own per-frame gradient.
    fn fisher(&self, t: usize, r: &[f64], ce_grad: &FrameMatrix) -> Vec<f64> {
        match self {
            OutputCurvature::Ce { .. } => fisher_output_product(ce_grad.row(t), r, 1.0),
            OutputCurvature::Mmi {
                gamma_mmi, kappa, ..
            }
            | OutputCurvature::Mpe {
                gamma_mmi, kappa, ..
            } => fisher_output_product(gamma_mmi.row(t), r, *kappa),
        }
    }
}

pub fn utterance_objective(
    utt: &Utterance,
    logits: &FrameMatrix,
    loss: &LossConfig,
) -> Result<UttObjective> {
    match loss.kind {
        LossKind::Ce => {
            let (l, g) = ce_loss_and_grad(logits, &utt.states)?;
            Ok(UttObjective {
                loss: l,
                output_grad: g,
                curvature: OutputCurvature::Ce {
                    y: softmax_rows(logits),
                },
            })
        }
        LossKind::Mmi => {
            let st = mmi_loss_and_occupancy(&utt.lattices, logits, loss)?;
            Ok(UttObjective {
                loss: st.loss,
                output_grad: st.output_grad,
                curvature: OutputCurvature::Mmi {
                    gamma_den: st.gamma_den,
                    gamma_mmi: st.gamma_mmi,
                    kappa: loss.kappa,
                },
            })
        }
        LossKind::Mpe => {
            let st = mpe_loss_and_occupancy(&utt.lattices, &utt.reference, logits, loss)?;
            Ok(UttObjective {
                loss: st.loss,
                output_grad: st.output_grad,
                curvature: OutputCurvature::Mpe {
                    gamma: st.gamma,
                    gamma_mpe: st.gamma_mpe.expect("mpe occupancy"),
                    gamma_mmi: st.gamma_mmi,
                    kappa: loss.kappa,
                },
            })
        }
    }
}

/// Loss value only; skips the occupancy matrices where possible.
pub fn utterance_loss(utt: &Utterance, logits: &FrameMatrix, loss: &LossConfig) -> Result<f64> {
    match loss.kind {
        LossKind::Ce => Ok(ce_loss_and_grad(logits, &utt.states)?.0),
        LossKind::Mmi => Ok(mmi_loss_and_occupancy(&utt.lattices, logits, loss)?.loss),
        LossKind::Mpe => {
            let (c_avg, n_ref) = expected_correctness(utt, logits, loss)?;
            Ok(n_ref - c_avg)
        }
    }
}

/// `(c_avg, number of reference phones)` over the denominator lattice.
pub fn expected_correctness(
    utt: &Utterance,
    logits: &FrameMatrix,
    loss: &LossConfig,
) -> Result<(f64, f64)> {
    let den = &utt.lattices.den;
    den.check_states(logits.cols())?;
    let scores = den.total_scores(&log_softmax_rows(logits), &loss.log_priors, loss.kappa)?;
    let fb = forward_backward(den, &scores)?;
    let st = mpe_stats(den, &scores, &fb, &den.arc_correctness(&utt.reference)?)?;
    Ok((st.c_avg, utt.reference.len() as f64))
}

/// Averaged gradient of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    /// Share-normalised average gradient.
    pub gradient: ParamVector,
    /// Average gradient before share normalisation.
    pub raw: Vec<f64>,
    /// Average per-utterance loss.
    pub loss: f64,
    pub utterances: usize,
    pub failures: Vec<Failure>,
}

/// Largest tolerated fraction of skipped utterances in a gradient batch.
pub const MAX_SKIP_FRACTION: f64 = 0.1;

/// Average of share-normalised EBP gradients over the batch. Utterances that
/// fail are skipped; more than 10% failures aborts with `FailedUpdate`.
pub fn accumulate_gradient(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &[&Utterance],
    loss: &LossConfig,
    pool: &WorkerPool,
) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient batch"));
    }
    let res = pool.map_reduce(
        batch,
        |u| u.id.clone(),
        |u| {
            let tape = forward(model, params, &u.features)?;
            let obj = utterance_objective(u, &tape.logits(), loss)?;
            let g = backprop(model, params, &tape, &obj.output_grad, false)?;
            Ok(Partial {
                vector: g.values,
                scalars: vec![obj.loss],
            })
        },
    )?;
    if res.count == 0 || res.failure_rate() > MAX_SKIP_FRACTION {
        return Err(Error::FailedUpdate(format!(
            "{} of {} utterances failed in the gradient batch{}",
            res.failures.len(),
            batch.len(),
            res.failures
                .first()
                .map(|f| format!(" (first: {}: {})", f.key, f.msg))
                .unwrap_or_default()
        )));
    }
    let n = res.count as f64;
    let raw: Vec<f64> = res.sum.iter().map(|x| x / n).collect();
    let counts = crate::model::share_counts(model);
    let normalized = crate::cg::precondition(&raw, &counts);
    Ok(BatchGradient {
        gradient: ParamVector::new(normalized, params.precision),
        raw,
        loss: res.scalars[0] / n,
        utterances: res.count,
        failures: res.failures,
    })
}

/// Summed per-item thread time of the stages of one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalTiming {
    pub forward_ms: f64,
    pub lattice_ms: f64,
}

/// Average loss over the batch at `params`. Any failing utterance makes the
/// whole evaluation non-finite.
pub fn batch_loss(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &[&Utterance],
    loss: &LossConfig,
    pool: &WorkerPool,
) -> Result<(f64, EvalTiming)> {
    if batch.is_empty() {
        return Err(Error::Empty("evaluation batch"));
    }
    let res = pool.map_reduce(
        batch,
        |u| u.id.clone(),
        |u| {
            let t0 = Instant::now();
            let logits = forward(model, params, &u.features)?.logits();
            let f_ms = ms(t0);
            let t1 = Instant::now();
            let l = utterance_loss(u, &logits, loss)?;
            Ok(Partial {
                vector: Vec::new(),
                scalars: vec![l, f_ms, ms(t1)],
            })
        },
    )?;
    if !res.failures.is_empty() {
        return Err(Error::NonFinite("evaluation batch loss"));
    }
    let l = res.scalars[0] / res.count as f64;
    if !l.is_finite() {
        return Err(Error::NonFinite("evaluation batch loss"));
    }
    Ok((
        l,
        EvalTiming {
            forward_ms: res.scalars[1],
            lattice_ms: res.scalars[2],
        },
    ))
}

/// Set-level metrics used for logging and model selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetMetrics {
    /// Average per-utterance value of the configured loss.
    pub loss: f64,
    /// Expected phone correctness normalised by reference phone count.
    pub mpe_accuracy: f64,
    /// Fraction of frames whose arg-max output differs from the reference state.
    pub frame_error: f64,
    pub utterances: usize,
}

pub fn evaluate_set(
    model: &ModelSpec,
    params: &ParamVector,
    utts: &[&Utterance],
    loss: &LossConfig,
    pool: &WorkerPool,
) -> Result<SetMetrics> {
    if utts.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let res = pool.map_reduce(
        utts,
        |u| u.id.clone(),
        |u| {
            let logits = forward(model, params, &u.features)?.logits();
            let l = utterance_loss(u, &logits, loss)?;
            let (c_avg, n_ref) = expected_correctness(u, &logits, loss)?;
            let errors = logits
                .iter_rows()
                .zip(&u.states)
                .filter(|(row, &s)| argmax(row) != s)
                .count();
            Ok(Partial {
                vector: Vec::new(),
                scalars: vec![l, c_avg, n_ref, errors as f64, u.num_frames() as f64],
            })
        },
    )?;
    if let Some(f) = res.failures.first() {
        return Err(Error::InvalidLattice {
            utt: f.key.clone(),
            msg: f.msg.clone(),
        });
    }
    let s = &res.scalars;
    Ok(SetMetrics {
        loss: s[0] / res.count as f64,
        mpe_accuracy: s[1] / s[2],
        frame_error: s[3] / s[4],
        utterances: res.count,
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

struct CurvItem<'a> {
    utt: &'a Utterance,
    tape: ActivationTape,
    obj: UttObjective,
}

/// Cached forward passes and output statistics of a CG batch, from which
/// curvature-vector products are formed.
pub struct CurvatureBatch<'a> {
    model: &'a ModelSpec,
    params: &'a ParamVector,
    items: Vec<CurvItem<'a>>,
    /// Average loss at the current parameters.
    pub base_loss: f64,
    pub failures: Vec<Failure>,
}

/// Summed per-item thread time of a curvature product.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProductTiming {
    pub rforward_ms: f64,
    pub ebp_ms: f64,
}

impl<'a> CurvatureBatch<'a> {
    pub fn build(
        model: &'a ModelSpec,
        params: &'a ParamVector,
        batch: &[&'a Utterance],
        loss: &LossConfig,
        pool: &WorkerPool,
    ) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Empty("cg batch"));
        }
        let built = pool.map_indexed(batch, |u| {
            let tape = forward(model, params, &u.features)?;
            let obj = utterance_objective(u, &tape.logits(), loss)?;
            if !obj.loss.is_finite() {
                return Err(Error::NonFinite("cg batch loss"));
            }
            Ok(CurvItem { utt: u, tape, obj })
        });
        let mut items = Vec::new();
        let mut failures = Vec::new();
        for (i, r) in built {
            match r {
                Ok(item) => items.push(item),
                Err(e) => failures.push(Failure {
                    key: batch[i].id.clone(),
                    msg: e.to_string(),
                }),
            }
        }
        if items.is_empty() {
            return Err(Error::FailedUpdate(
                "every cg batch utterance failed".into(),
            ));
        }
        items.sort_by(|a, b| a.utt.id.cmp(&b.utt.id));
        let base_loss = items.iter().map(|it| it.obj.loss).sum::<f64>() / items.len() as f64;
        Ok(Self {
            model,
            params,
            items,
            base_loss,
            failures,
        })
    }

    pub fn model(&self) -> &'a ModelSpec {
        self.model
    }

    pub fn utterances(&self) -> Vec<&'a Utterance> {
        self.items.iter().map(|it| it.utt).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Average raw (not share-normalised) curvature product `B v`, where `B`
    /// is the Gauss-Newton matrix or `scale` times the empirical Fisher.
    pub fn product(
        &self,
        kind: CurvatureKind,
        scale: f64,
        v: &[f64],
        pool: &WorkerPool,
    ) -> Result<(Vec<f64>, ProductTiming)> {
        let res = pool.map_reduce(
            &self.items,
            |it| it.utt.id.clone(),
            |it| {
                let t0 = Instant::now();
                let rj = r_forward(self.model, self.params, &it.tape, v)?;
                let rf_ms = ms(t0);
                let hr = rj.map_rows(|t, r| match kind {
                    CurvatureKind::GaussNewton => it.obj.curvature.gauss_newton(t, r),
                    CurvatureKind::Fisher => it.obj.curvature.fisher(t, r, &it.obj.output_grad),
                })?;
                let t1 = Instant::now();
                let bv = backprop(self.model, self.params, &it.tape, &hr, false)?;
                Ok(Partial {
                    vector: bv.values,
                    scalars: vec![rf_ms, ms(t1)],
                })
            },
        )?;
        if !res.failures.is_empty() {
            return Err(Error::NonFinite("curvature product"));
        }
        let n = res.count as f64;
        let out = res.sum.iter().map(|x| scale * x / n).collect();
        Ok((
            out,
            ProductTiming {
                rforward_ms: res.scalars[0],
                ebp_ms: res.scalars[1],
            },
        ))
    }
}
