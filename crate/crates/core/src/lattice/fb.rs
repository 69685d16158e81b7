use super::{Arc, Lattice};
use crate::error::{check_dim, Error, Result};
use crate::param::FrameMatrix;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Row-wise `log softmax`.
pub fn log_softmax_rows(logits: &FrameMatrix) -> FrameMatrix {
    logits
        .map_rows(|_, row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|a| (a - max).exp()).sum::<f64>().ln();
            row.iter().map(|a| a - lse).collect()
        })
        .expect("same shape")
}

fn score_from_log_post(
    arc: &Arc,
    start_frame: usize,
    log_post: &FrameMatrix,
    log_priors: &[f64],
    kappa: f64,
) -> Result<f64> {
    let end = start_frame + arc.alignment.len();
    if end > log_post.rows() {
        return Err(Error::DimensionMismatch {
            context: "arc span beyond logits",
            expected: end,
            actual: log_post.rows(),
        });
    }
    let mut sum = 0.0;
    for (k, &s) in arc.alignment.iter().enumerate() {
        let row = log_post.row(start_frame + k);
        if s >= row.len() || s >= log_priors.len() {
            return Err(Error::LabelOutOfRange {
                label: s,
                num_states: row.len(),
            });
        }
        sum += row[s] - log_priors[s];
    }
    Ok(kappa * sum)
}

/// Scaled-likelihood acoustic score of an arc starting at `start_frame`:
/// `κ Σ_t (log softmax(a_t)[s_t] - log prior[s_t])`.
pub fn arc_acoustic_score(
    arc: &Arc,
    start_frame: usize,
    logits: &FrameMatrix,
    log_priors: &[f64],
    kappa: f64,
) -> Result<f64> {
    let end = start_frame + arc.alignment.len();
    if end > logits.rows() {
        return Err(Error::DimensionMismatch {
            context: "arc span beyond logits",
            expected: end,
            actual: logits.rows(),
        });
    }
    let span = FrameMatrix::from_vec(
        arc.alignment.len(),
        logits.cols(),
        logits.as_slice()[start_frame * logits.cols()..end * logits.cols()].to_vec(),
    )?;
    score_from_log_post(arc, 0, &log_softmax_rows(&span), log_priors, kappa)
}

impl Lattice {
    /// Per-arc total log scores (acoustic plus LM) given frame log posteriors.
    pub fn total_scores(
        &self,
        log_post: &FrameMatrix,
        log_priors: &[f64],
        kappa: f64,
    ) -> Result<Vec<f64>> {
        check_dim("lattice frames", self.num_frames(), log_post.rows())?;
        self.arcs()
            .iter()
            .enumerate()
            .map(|(i, arc)| {
                Ok(
                    score_from_log_post(arc, self.arc_start_frame(i), log_post, log_priors, kappa)?
                        + arc.lm_logprob,
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbResult {
    /// Posterior occupancy of each arc.
    pub gamma: Vec<f64>,
    pub log_z: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Log-domain forward-backward over arc scores.
pub fn forward_backward(lat: &Lattice, arc_scores: &[f64]) -> Result<FbResult> {
    check_dim("arc scores", lat.arcs().len(), arc_scores.len())?;
    if arc_scores.iter().any(|s| s.is_nan() || *s == f64::INFINITY) {
        return Err(Error::NonFinite("arc scores"));
    }
    let n = lat.nodes().len();
    let arcs = lat.arcs();
    let mut alpha = vec![f64::NEG_INFINITY; n];
    alpha[lat.start_node()] = 0.0;
    for &v in lat.topo_order() {
        for &q in lat.incoming(v) {
            alpha[v] = log_add(alpha[v], alpha[arcs[q].start] + arc_scores[q]);
        }
    }
    let mut beta = vec![f64::NEG_INFINITY; n];
    beta[lat.end_node()] = 0.0;
    for &v in lat.topo_order().iter().rev() {
        for &q in lat.outgoing(v) {
            beta[v] = log_add(beta[v], arc_scores[q] + beta[arcs[q].end]);
        }
    }
    let log_z = alpha[lat.end_node()];
    if log_z == f64::NEG_INFINITY {
        return Err(Error::InvalidLattice {
            utt: lat.utt_id.clone(),
            msg: "total lattice probability is zero".into(),
        });
    }
    let gamma = arcs
        .iter()
        .zip(arc_scores)
        .map(|(a, s)| (alpha[a.start] + s + beta[a.end] - log_z).exp())
        .collect();
    Ok(FbResult {
        gamma,
        log_z,
        alpha,
        beta,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpeArcStats {
    pub gamma_q: Vec<f64>,
    /// Expected correctness of full paths through each arc.
    pub c_q: Vec<f64>,
    /// Expected correctness of all paths.
    pub c_avg: f64,
    pub log_z: f64,
}

/// Second forward-backward pass propagating expected partial correctness.
pub fn mpe_stats(
    lat: &Lattice,
    arc_scores: &[f64],
    fb: &FbResult,
    correctness: &[f64],
) -> Result<MpeArcStats> {
    check_dim("arc correctness", lat.arcs().len(), correctness.len())?;
    check_dim("arc scores", lat.arcs().len(), arc_scores.len())?;
    let n = lat.nodes().len();
    let arcs = lat.arcs();
    let mut fwd = vec![0.0; n];
    for &v in lat.topo_order() {
        if lat.incoming(v).is_empty() {
            continue;
        }
        let mut acc = 0.0;
        for &q in lat.incoming(v) {
            let s = arcs[q].start;
            let w = (fb.alpha[s] + arc_scores[q] - fb.alpha[v]).exp();
            acc += w * (fwd[s] + correctness[q]);
        }
        fwd[v] = acc;
    }
    let mut bwd = vec![0.0; n];
    for &v in lat.topo_order().iter().rev() {
        if lat.outgoing(v).is_empty() {
            continue;
        }
        let mut acc = 0.0;
        for &q in lat.outgoing(v) {
            let e = arcs[q].end;
            let w = (arc_scores[q] + fb.beta[e] - fb.beta[v]).exp();
            acc += w * (correctness[q] + bwd[e]);
        }
        bwd[v] = acc;
    }
    let c_q = arcs
        .iter()
        .zip(correctness)
        .map(|(a, c)| fwd[a.start] + c + bwd[a.end])
        .collect();
    Ok(MpeArcStats {
        gamma_q: fb.gamma.clone(),
        c_q,
        c_avg: fwd[lat.end_node()],
        log_z: fb.log_z,
    })
}

/// `γ_{t,k}`: summed occupancy of arcs aligning frame `t` to state `k`.
pub fn state_occupancy(lat: &Lattice, gamma_q: &[f64], num_states: usize) -> Result<FrameMatrix> {
    per_frame_state_sum(lat, num_states, |q| gamma_q[q])
}

/// `γ^MPE_{t,k} = Σ_{q ∋ t, aligns k} γ_q (c_q - c_avg)`.
pub fn mpe_occupancy(lat: &Lattice, stats: &MpeArcStats, num_states: usize) -> Result<FrameMatrix> {
    per_frame_state_sum(lat, num_states, |q| {
        stats.gamma_q[q] * (stats.c_q[q] - stats.c_avg)
    })
}

fn per_frame_state_sum(
    lat: &Lattice,
    num_states: usize,
    weight: impl Fn(usize) -> f64,
) -> Result<FrameMatrix> {
    lat.check_states(num_states)?;
    let mut out = FrameMatrix::zeros(lat.num_frames(), num_states);
    for (q, arc) in lat.arcs().iter().enumerate() {
        let w = weight(q);
        let t0 = lat.arc_start_frame(q);
        for (k, &s) in arc.alignment.iter().enumerate() {
            out.row_mut(t0 + k)[s] += w;
        }
    }
    Ok(out)
}
