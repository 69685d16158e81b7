//! Linear conjugate gradient with curvature products supplied by a callback.
//!
//! The solver minimises the quadratic model
//! `q(Δθ) = -bᵀΔθ + ½ ΔθᵀBΔθ` and records every iterate as a candidate
//! update. With preconditioning on, the residual is divided by the share
//! counts before it feeds the search direction, which is CG on
//! `M⁻¹B` with `M = diag(c)`; in inner-product form this is the same
//! iteration as symmetric preconditioning with `diag(√c)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::ShareCounts;
use crate::param::{axpy, dot, norm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgConfig {
    pub max_iters: usize,
    /// Tikhonov damping `η`: every product becomes `Bv + ηv`.
    pub damping: f64,
    pub stabilize: bool,
    pub precondition: bool,
    pub eval_every: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_iters: 8,
            damping: 0.0,
            stabilize: true,
            precondition: true,
            eval_every: 1,
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("cg max_iters must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("cg eval_every must be at least 1".into()));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::Config(format!(
                "cg damping must be >= 0, got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

/// Iterate `Δθ_m` of a CG run.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateCandidate {
    /// 1-based iteration that produced this iterate.
    pub iteration: usize,
    pub delta: Vec<f64>,
    /// Quadratic model value `q(Δθ_m)`.
    pub quad_value: f64,
    /// CG-batch loss at `θ + Δθ_m`, filled by [`select_update`].
    pub eval_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgTraceRecord {
    pub iteration: usize,
    pub alpha: f64,
    pub beta: f64,
    /// `‖r_m‖` after the iteration.
    pub residual_norm: f64,
    pub quad_value: f64,
    pub eval_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CgStop {
    MaxIters,
    /// Residual vanished.
    Converged,
    /// `vᵀBv ≤ 0`; the candidates so far are returned.
    NegativeCurvature,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub candidates: Vec<UpdateCandidate>,
    pub trace: Vec<CgTraceRecord>,
    pub stop: CgStop,
}

impl CgOutcome {
    pub fn iterations(&self) -> usize {
        self.candidates.len()
    }

    pub fn flagged(&self) -> bool {
        matches!(self.stop, CgStop::NegativeCurvature | CgStop::NonFinite)
    }
}

/// Divides each entry by its share count.
pub fn precondition(vec: &[f64], counts: &ShareCounts) -> Vec<f64> {
    assert_eq!(vec.len(), counts.len(), "share counts length");
    vec.iter()
        .zip(counts.as_slice())
        .map(|(x, &c)| x / c as f64)
        .collect()
}

/// `(1/s)·B(s·v)` with `s = ‖θ‖/‖v‖`, which lifts `v` to the scale of the
/// parameters before a limited-precision product.
pub fn stabilized_product(
    mut apply_raw: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    v: &[f64],
    theta: &[f64],
) -> Result<Vec<f64>> {
    let nv = norm(v);
    if nv == 0.0 {
        return Ok(vec![0.0; v.len()]);
    }
    let nt = norm(theta);
    if nt == 0.0 || !nt.is_finite() {
        return apply_raw(v);
    }
    let s = nt / nv;
    let sv: Vec<f64> = v.iter().map(|x| s * x).collect();
    Ok(apply_raw(&sv)?.into_iter().map(|x| x / s).collect())
}

/// Runs up to `cfg.max_iters` CG iterations on `B Δθ = b`, starting at 0.
///
/// `apply_b` returns the raw curvature product; damping, stabilisation
/// (scaled to `theta`) and preconditioning are applied here.
pub fn cg_run(
    b: &[f64],
    theta: &[f64],
    mut apply_b: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    counts: &ShareCounts,
    cfg: &CgConfig,
) -> Result<CgOutcome> {
    cfg.validate()?;
    let n = b.len();
    check_dim("cg share counts", n, counts.len())?;
    check_dim("cg parameters", n, theta.len())?;
    if !b.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("cg right-hand side"));
    }
    let precond = |r: &[f64]| -> Vec<f64> {
        if cfg.precondition {
            precondition(r, counts)
        } else {
            r.to_vec()
        }
    };
    let mut product = |v: &[f64]| -> Result<Vec<f64>> {
        let mut bv = if cfg.stabilize {
            stabilized_product(&mut apply_b, v, theta)?
        } else {
            apply_b(v)?
        };
        check_dim("curvature product", n, bv.len())?;
        if cfg.damping > 0.0 {
            axpy(cfg.damping, v, &mut bv);
        }
        Ok(bv)
    };

    let mut delta = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut v = z.clone();
    let mut rz = dot(&r, &z);
    let rz0 = rz;
    let mut quad = 0.0;
    let mut candidates = Vec::new();
    let mut trace = Vec::new();
    let mut stop = CgStop::MaxIters;

    for m in 0..cfg.max_iters {
        if rz <= rz0 * 1e-28 || rz == 0.0 {
            stop = CgStop::Converged;
            break;
        }
        let bv = match product(&v) {
            Ok(bv) => bv,
            Err(Error::NonFinite(_)) => {
                stop = CgStop::NonFinite;
                break;
            }
            Err(e) => return Err(e),
        };
        let vbv = dot(&v, &bv);
        if !vbv.is_finite() || bv.iter().any(|x| !x.is_finite()) {
            stop = CgStop::NonFinite;
            break;
        }
        if vbv <= 0.0 {
            stop = CgStop::NegativeCurvature;
            break;
        }
        let alpha = rz / vbv;
        let rv = dot(&r, &v);
        axpy(alpha, &v, &mut delta);
        axpy(-alpha, &bv, &mut r);
        quad += -alpha * rv + 0.5 * alpha * alpha * vbv;
        z = precond(&r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        if !(alpha.is_finite() && beta.is_finite() && quad.is_finite()) {
            stop = CgStop::NonFinite;
            break;
        }
        for (vi, zi) in v.iter_mut().zip(&z) {
            *vi = zi + beta * *vi;
        }
        rz = rz_next;
        candidates.push(UpdateCandidate {
            iteration: m + 1,
            delta: delta.clone(),
            quad_value: quad,
            eval_loss: None,
        });
        trace.push(CgTraceRecord {
            iteration: m + 1,
            alpha,
            beta,
            residual_norm: norm(&r),
            quad_value: quad,
            eval_loss: None,
        });
    }
    if stop == CgStop::MaxIters && candidates.len() < cfg.max_iters {
        stop = CgStop::Converged;
    }
    Ok(CgOutcome {
        candidates,
        trace,
        stop,
    })
}

/// 0-based candidate indices evaluated with stride `every`: `m = 1, 1+every, …`
/// plus the last.
pub fn evaluation_schedule(num_candidates: usize, every: usize) -> Vec<usize> {
    let every = every.max(1);
    let mut idx: Vec<usize> = (0..num_candidates).step_by(every).collect();
    if num_candidates > 0 && idx.last() != Some(&(num_candidates - 1)) {
        idx.push(num_candidates - 1);
    }
    idx
}

/// Evaluates the scheduled candidates and returns the index of the best,
/// breaking ties toward the earlier iterate. A lone candidate is returned
/// without evaluation.
pub fn select_update(
    candidates: &mut [UpdateCandidate],
    mut evaluate: impl FnMut(&[f64]) -> Result<f64>,
    every: usize,
) -> Result<usize> {
    match candidates.len() {
        0 => return Err(Error::Empty("cg candidates")),
        1 => return Ok(0),
        _ => {}
    }
    let mut best: Option<(usize, f64)> = None;
    for i in evaluation_schedule(candidates.len(), every) {
        let loss = match evaluate(&candidates[i].delta) {
            Ok(l) => l,
            Err(Error::NonFinite(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        candidates[i].eval_loss = Some(loss);
        if loss.is_finite() && best.is_none_or(|(_, l)| loss < l) {
            best = Some((i, loss));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::FailedUpdate("every evaluated candidate is non-finite".into()))
}
