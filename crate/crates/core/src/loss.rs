//! Loss values, output-layer gradients and output-layer curvature-vector
//! products for frame-level cross-entropy and the lattice-based MMI and MPE
//! criteria.
//!
//! All gradients here are with respect to the logits `a^out_t`; the model
//! module maps them back to parameters.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{check_dim, Error, Result};
use crate::lattice::{
    forward_backward, log_softmax_rows, mpe_occupancy, mpe_stats, state_occupancy, NumDenPair,
    TimedPhone,
};
use crate::param::{dot, FrameMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    Ce,
    Mmi,
    Mpe,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Ce => "ce",
            LossKind::Mmi => "mmi",
            LossKind::Mpe => "mpe",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Ok(LossKind::Ce),
            "mmi" => Ok(LossKind::Mmi),
            "mpe" | "mbr" => Ok(LossKind::Mpe),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Acoustic scale.
    pub kappa: f64,
    /// Log state priors used to turn posteriors into scaled likelihoods.
    pub log_priors: Vec<f64>,
}

impl LossConfig {
    pub fn new(kind: LossKind, kappa: f64, log_priors: Vec<f64>) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Config(format!(
                "acoustic scale must be positive, got {kappa}"
            )));
        }
        if log_priors.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("log priors must be finite".into()));
        }
        Ok(Self {
            kind,
            kappa,
            log_priors,
        })
    }

    /// Uniform priors over `num_states` outputs.
    pub fn uniform(kind: LossKind, kappa: f64, num_states: usize) -> Result<Self> {
        Self::new(kind, kappa, vec![-(num_states as f64).ln(); num_states])
    }

    /// Priors estimated from state label counts (add-one smoothed).
    pub fn estimated(kind: LossKind, kappa: f64, counts: &[usize]) -> Result<Self> {
        let total: f64 = counts.iter().map(|&c| c as f64 + 1.0).sum();
        let priors = counts
            .iter()
            .map(|&c| ((c as f64 + 1.0) / total).ln())
            .collect();
        Self::new(kind, kappa, priors)
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|a| (a - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn softmax_rows(logits: &FrameMatrix) -> FrameMatrix {
    logits.map_rows(|_, r| softmax(r)).expect("same shape")
}

/// Frame-level cross-entropy `-Σ_t log softmax(a_t)[label_t]` and its logit
/// gradient `softmax(a_t) - onehot(label_t)`.
pub fn ce_loss_and_grad(logits: &FrameMatrix, labels: &[usize]) -> Result<(f64, FrameMatrix)> {
    check_dim("frame labels", logits.rows(), labels.len())?;
    let k = logits.cols();
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange {
            label,
            num_states: k,
        });
    }
    let log_post = log_softmax_rows(logits);
    let loss = labels
        .iter()
        .enumerate()
        .map(|(t, &l)| -log_post.row(t)[l])
        .sum();
    let grad = log_post.map_rows(|t, lp| {
        let mut g: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
        g[labels[t]] -= 1.0;
        g
    })?;
    Ok((loss, grad))
}

/// Softmax/CE output Hessian product `(diag(y) - y yᵀ) R`.
pub fn ce_output_hessian_product(y: &[f64], r: &[f64]) -> Vec<f64> {
    let yr = dot(y, r);
    y.iter().zip(r).map(|(yi, ri)| yi * ri - yi * yr).collect()
}

/// `κ² γ ⊙ R - κ² γ^MPE (γ · R)`.
pub fn mbr_output_hessian_product(
    gamma: &[f64],
    gamma_mpe: &[f64],
    r: &[f64],
    kappa: f64,
) -> Vec<f64> {
    let k2 = kappa * kappa;
    let gr = dot(gamma, r);
    gamma
        .iter()
        .zip(gamma_mpe)
        .zip(r)
        .map(|((g, gm), ri)| k2 * g * ri - k2 * gm * gr)
        .collect()
}

/// Empirical Fisher output product `κ² γ^MMI (γ^MMI · R)`.
pub fn fisher_output_product(gamma_mmi: &[f64], r: &[f64], kappa: f64) -> Vec<f64> {
    let scale = kappa * kappa * dot(gamma_mmi, r);
    gamma_mmi.iter().map(|g| scale * g).collect()
}

/// Lattice statistics of one utterance under the current logits.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyStats {
    /// Denominator state posterior `γ_t`.
    pub gamma: FrameMatrix,
    pub gamma_num: FrameMatrix,
    pub gamma_den: FrameMatrix,
    /// `γ^num - γ^den`.
    pub gamma_mmi: FrameMatrix,
    pub gamma_mpe: Option<FrameMatrix>,
    pub log_z_num: f64,
    pub log_z_den: f64,
    /// Expected path correctness over the denominator lattice.
    pub c_avg: Option<f64>,
    /// `c_avg` normalised by the number of reference phones.
    pub mpe_accuracy: Option<f64>,
    pub loss: f64,
    /// `∂loss/∂a^out_t` for every frame.
    pub output_grad: FrameMatrix,
}

fn lattice_occupancies(
    pair: &NumDenPair,
    logits: &FrameMatrix,
    cfg: &LossConfig,
) -> Result<(
    FrameMatrix,
    f64,
    FrameMatrix,
    f64,
    Vec<f64>,
    crate::lattice::FbResult,
)> {
    let k = logits.cols();
    check_dim("log priors", k, cfg.log_priors.len())?;
    check_dim("utterance frames", pair.num_frames(), logits.rows())?;
    pair.num.check_states(k)?;
    pair.den.check_states(k)?;
    let log_post = log_softmax_rows(logits);
    let num_scores = pair
        .num
        .total_scores(&log_post, &cfg.log_priors, cfg.kappa)?;
    let den_scores = pair
        .den
        .total_scores(&log_post, &cfg.log_priors, cfg.kappa)?;
    let num_fb = forward_backward(&pair.num, &num_scores)?;
    let den_fb = forward_backward(&pair.den, &den_scores)?;
    let gamma_num = state_occupancy(&pair.num, &num_fb.gamma, k)?;
    let gamma_den = state_occupancy(&pair.den, &den_fb.gamma, k)?;
    Ok((
        gamma_num,
        num_fb.log_z,
        gamma_den,
        den_fb.log_z,
        den_scores,
        den_fb,
    ))
}

fn diff(a: &FrameMatrix, b: &FrameMatrix) -> FrameMatrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x - y)
        .collect();
    FrameMatrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn scaled(m: &FrameMatrix, s: f64) -> FrameMatrix {
    let data = m.as_slice().iter().map(|x| s * x).collect();
    FrameMatrix::from_vec(m.rows(), m.cols(), data).expect("same shape")
}

/// MMI loss `-(log Z_num - log Z_den)` with logit gradient `-κ γ^MMI_t`.
pub fn mmi_loss_and_occupancy(
    pair: &NumDenPair,
    logits: &FrameMatrix,
    cfg: &LossConfig,
) -> Result<OccupancyStats> {
    let (gamma_num, log_z_num, gamma_den, log_z_den, _, _) =
        lattice_occupancies(pair, logits, cfg)?;
    let gamma_mmi = diff(&gamma_num, &gamma_den);
    let output_grad = scaled(&gamma_mmi, -cfg.kappa);
    Ok(OccupancyStats {
        gamma: gamma_den.clone(),
        gamma_num,
        gamma_den,
        gamma_mmi,
        gamma_mpe: None,
        log_z_num,
        log_z_den,
        c_avg: None,
        mpe_accuracy: None,
        loss: -(log_z_num - log_z_den),
        output_grad,
    })
}

/// MPE loss: expected phone errors `N_ref - c_avg` over the denominator
/// lattice, with logit gradient `-κ γ^MPE_t`. The MMI occupancies are
/// filled in too, since the Fisher product uses them whatever the loss.
pub fn mpe_loss_and_occupancy(
    pair: &NumDenPair,
    reference: &[TimedPhone],
    logits: &FrameMatrix,
    cfg: &LossConfig,
) -> Result<OccupancyStats> {
    let (gamma_num, log_z_num, gamma_den, log_z_den, den_scores, den_fb) =
        lattice_occupancies(pair, logits, cfg)?;
    let correctness = pair.den.arc_correctness(reference)?;
    let stats = mpe_stats(&pair.den, &den_scores, &den_fb, &correctness)?;
    let gamma_mpe = mpe_occupancy(&pair.den, &stats, logits.cols())?;
    let output_grad = scaled(&gamma_mpe, -cfg.kappa);
    let n_ref = reference.len() as f64;
    Ok(OccupancyStats {
        gamma: gamma_den.clone(),
        gamma_mmi: diff(&gamma_num, &gamma_den),
        gamma_num,
        gamma_den,
        gamma_mpe: Some(gamma_mpe),
        log_z_num,
        log_z_den,
        c_avg: Some(stats.c_avg),
        mpe_accuracy: Some(stats.c_avg / n_ref),
        loss: n_ref - stats.c_avg,
        output_grad,
    })
}
