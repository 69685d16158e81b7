//! Independent oracles shared by the integration tests: a straightforward
//! reference network (generic over plain and dual numbers), finite
//! differences, exhaustive lattice path enumeration, dense curvature assembly
//! and small random builders.

#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use nghf::data::Utterance;
use nghf::lattice::{Arc, Lattice, Node, NumDenPair, TimedPhone};
use nghf::loss::{mmi_loss_and_occupancy, mpe_loss_and_occupancy, softmax, LossConfig, LossKind};
use nghf::model::{Activation, LayerKind, LayerSpec, ModelSpec};
use nghf::{FrameMatrix, ParamVector, Precision};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn rel_l2(approx: &[f64], exact: &[f64]) -> f64 {
    let num: f64 = approx
        .iter()
        .zip(exact)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = exact.iter().map(|b| b * b).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

// ---------------------------------------------------------------- numbers

/// Forward-mode dual number `v + d·ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn new(v: f64, d: f64) -> Self {
        Self { v, d }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.v + o.v, self.d + o.d)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.v - o.v, self.d - o.d)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.v * o.v, self.d * o.v + self.v * o.d)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual::new(self.v / o.v, (self.d * o.v - self.v * o.d) / (o.v * o.v))
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.v, -self.d)
    }
}

pub trait Num:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn c(x: f64) -> Self;
    fn val(self) -> f64;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
}

impl Num for f64 {
    fn c(x: f64) -> Self {
        x
    }
    fn val(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

impl Num for Dual {
    fn c(x: f64) -> Self {
        Dual::new(x, 0.0)
    }
    fn val(self) -> f64 {
        self.v
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        Dual::new(e, self.d * e)
    }
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        Dual::new(t, self.d * (1.0 - t * t))
    }
}

fn sigmoid<N: Num>(a: N) -> N {
    N::c(1.0) / (N::c(1.0) + (-a).exp())
}

fn act<N: Num>(f: Activation, a: N) -> N {
    match f {
        Activation::Sigmoid => sigmoid(a),
        Activation::Tanh => a.tanh(),
        Activation::Relu => {
            if a.val() > 0.0 {
                a
            } else {
                N::c(0.0)
            }
        }
        Activation::Identity => a,
    }
}

// ------------------------------------------------------ reference network

/// Plain per-frame evaluation of the network, written without tapes: TDNN
/// frames outside the utterance replicate the boundary, recurrent layers
/// rerun their last `u` steps from a zero state for every output frame.
pub fn ref_logits<N: Num>(model: &ModelSpec, p: &[N], features: &FrameMatrix) -> Vec<Vec<N>> {
    let frames = features.rows();
    let mut x: Vec<Vec<N>> = (0..frames)
        .map(|t| features.row(t).iter().map(|&f| N::c(f)).collect())
        .collect();
    for (layer, lay) in model.layers.iter().zip(model.layouts()) {
        let w = |b: usize, r: usize, c: usize| p[lay.weight_index(b, r, c)];
        let bias = |b: usize, r: usize| p[lay.bias_index(b, r)];
        let affine = |b: usize, z: &[N]| -> Vec<N> {
            (0..lay.rows)
                .map(|r| {
                    z.iter()
                        .enumerate()
                        .fold(bias(b, r), |acc, (c, &zc)| acc + w(b, r, c) * zc)
                })
                .collect()
        };
        let out: Vec<Vec<N>> = match layer.kind {
            LayerKind::FullyConnected => x
                .iter()
                .map(|xt| {
                    affine(0, xt)
                        .into_iter()
                        .map(|a| act(layer.activation, a))
                        .collect()
                })
                .collect(),
            LayerKind::TdnnSplice => (0..frames)
                .map(|t| {
                    let z: Vec<N> = layer
                        .splice_offsets
                        .iter()
                        .flat_map(|&o| {
                            x[(t as i64 + o as i64).clamp(0, frames as i64 - 1) as usize].clone()
                        })
                        .collect();
                    affine(0, &z)
                        .into_iter()
                        .map(|a| act(layer.activation, a))
                        .collect()
                })
                .collect(),
            LayerKind::Recurrent => (0..frames)
                .map(|t| {
                    let start = (t + 1).saturating_sub(layer.unfold_steps);
                    let mut h = vec![N::c(0.0); layer.dim];
                    for xt in &x[start..=t] {
                        let z: Vec<N> = xt.iter().chain(h.iter()).copied().collect();
                        h = affine(0, &z)
                            .into_iter()
                            .map(|a| act(layer.activation, a))
                            .collect();
                    }
                    h
                })
                .collect(),
            LayerKind::Lstm => (0..frames)
                .map(|t| {
                    let start = (t + 1).saturating_sub(layer.unfold_steps);
                    let mut h = vec![N::c(0.0); layer.dim];
                    let mut c = vec![N::c(0.0); layer.dim];
                    for xt in &x[start..=t] {
                        let z: Vec<N> = xt.iter().chain(h.iter()).copied().collect();
                        let i: Vec<N> = affine(0, &z).into_iter().map(sigmoid).collect();
                        let f: Vec<N> = affine(1, &z).into_iter().map(sigmoid).collect();
                        let g: Vec<N> = affine(2, &z).into_iter().map(N::tanh).collect();
                        let o: Vec<N> = affine(3, &z).into_iter().map(sigmoid).collect();
                        for j in 0..layer.dim {
                            c[j] = f[j] * c[j] + i[j] * g[j];
                            h[j] = o[j] * c[j].tanh();
                        }
                    }
                    h
                })
                .collect(),
        };
        x = out;
    }
    x
}

pub fn ref_logit_matrix(model: &ModelSpec, params: &[f64], features: &FrameMatrix) -> FrameMatrix {
    FrameMatrix::from_rows(&ref_logits(model, params, features)).unwrap()
}

/// Exact directional derivative `J v` of the logits via dual numbers.
pub fn dual_jvp(
    model: &ModelSpec,
    params: &[f64],
    features: &FrameMatrix,
    v: &[f64],
) -> FrameMatrix {
    let p: Vec<Dual> = params
        .iter()
        .zip(v)
        .map(|(&x, &d)| Dual::new(x, d))
        .collect();
    let rows: Vec<Vec<f64>> = ref_logits(model, &p, features)
        .into_iter()
        .map(|r| r.into_iter().map(|d| d.d).collect())
        .collect();
    FrameMatrix::from_rows(&rows).unwrap()
}

/// Per-frame Jacobians `J_t` (K × D), one dual pass per parameter.
pub fn jacobians(model: &ModelSpec, params: &[f64], features: &FrameMatrix) -> Vec<DMatrix<f64>> {
    let d = params.len();
    let frames = features.rows();
    let k = model.output_dim;
    let mut js = vec![DMatrix::zeros(k, d); frames];
    let mut e = vec![0.0; d];
    for i in 0..d {
        e[i] = 1.0;
        let col = dual_jvp(model, params, features, &e);
        for (t, j) in js.iter_mut().enumerate() {
            for r in 0..k {
                j[(r, i)] = col.row(t)[r];
            }
        }
        e[i] = 0.0;
    }
    js
}

// ---------------------------------------------------- finite differences

/// Central-difference gradient of a scalar function.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + eps;
            let hi = f(&xp);
            xp[i] = x[i] - eps;
            let lo = f(&xp);
            xp[i] = x[i];
            (hi - lo) / (2.0 * eps)
        })
        .collect()
}

/// Central difference of a vector function along `v`.
pub fn fd_directional(
    mut f: impl FnMut(&[f64]) -> Vec<f64>,
    x: &[f64],
    v: &[f64],
    eps: f64,
) -> Vec<f64> {
    let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + eps * b).collect();
    let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - eps * b).collect();
    f(&xp)
        .iter()
        .zip(f(&xm))
        .map(|(a, b)| (a - b) / (2.0 * eps))
        .collect()
}

// ---------------------------------------------------- lattice enumeration

/// Every start-to-end path as a list of arc indices.
pub fn enumerate_paths(lat: &Lattice) -> Vec<Vec<usize>> {
    fn walk(lat: &Lattice, node: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if node == lat.end_node() {
            out.push(path.clone());
            return;
        }
        for (q, a) in lat.arcs().iter().enumerate() {
            if a.start == node {
                path.push(q);
                walk(lat, a.end, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(lat, lat.start_node(), &mut Vec::new(), &mut out);
    out
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Lattice statistics computed by brute force over complete paths.
#[derive(Debug, Clone)]
pub struct Enumerated {
    pub log_z: f64,
    pub gamma_q: Vec<f64>,
    pub c_q: Vec<f64>,
    pub c_avg: f64,
    pub paths: usize,
}

pub fn enumerate_stats(lat: &Lattice, scores: &[f64], correctness: &[f64]) -> Enumerated {
    let paths = enumerate_paths(lat);
    let path_scores: Vec<f64> = paths
        .iter()
        .map(|p| p.iter().map(|&q| scores[q]).sum())
        .collect();
    let log_z = log_sum_exp(&path_scores);
    let n = lat.arcs().len();
    let mut gamma_q = vec![0.0; n];
    let mut weighted = vec![0.0; n];
    let mut c_avg = 0.0;
    for (p, s) in paths.iter().zip(&path_scores) {
        let post = (s - log_z).exp();
        let c: f64 = p.iter().map(|&q| correctness[q]).sum();
        c_avg += post * c;
        for &q in p {
            gamma_q[q] += post;
            weighted[q] += post * c;
        }
    }
    let c_q = weighted
        .iter()
        .zip(&gamma_q)
        .map(|(w, g)| if *g > 0.0 { w / g } else { 0.0 })
        .collect();
    Enumerated {
        log_z,
        gamma_q,
        c_q,
        c_avg,
        paths: paths.len(),
    }
}

pub fn count_paths(lat: &Lattice) -> f64 {
    let mut ways = vec![0.0; lat.nodes().len()];
    ways[lat.start_node()] = 1.0;
    let mut order: Vec<usize> = (0..lat.nodes().len()).collect();
    order.sort_by_key(|&v| lat.nodes()[v].time);
    for v in order {
        for a in lat.arcs().iter().filter(|a| a.start == v) {
            ways[a.end] += ways[v];
        }
    }
    ways[lat.end_node()]
}

// --------------------------------------------------------------- builders

pub fn arc(
    start: usize,
    end: usize,
    phone: &str,
    lm: f64,
    alignment: &[usize],
    correctness: Option<f64>,
) -> Arc {
    Arc {
        start,
        end,
        phone: phone.into(),
        lm_logprob: lm,
        alignment: alignment.to_vec(),
        correctness,
    }
}

pub fn nodes(times: &[usize]) -> Vec<Node> {
    times
        .iter()
        .enumerate()
        .map(|(id, &time)| Node { id, time })
        .collect()
}

/// Random layered DAG over `frames` frames with `1..=2` nodes per interior
/// layer and occasional layer-skipping arcs; at most `max_paths` paths.
pub fn random_lattice(
    rng: &mut ChaCha8Rng,
    id: &str,
    frames: usize,
    num_states: usize,
    phones: usize,
    max_paths: f64,
) -> Lattice {
    assert!(frames >= 2);
    loop {
        let mut cuts: Vec<usize> = (1..frames).filter(|_| rng.random_bool(0.5)).collect();
        cuts.insert(0, 0);
        cuts.push(frames);
        let mut layers: Vec<Vec<usize>> = Vec::new();
        let mut times = Vec::new();
        for (l, &t) in cuts.iter().enumerate() {
            let width = if l == 0 || l + 1 == cuts.len() {
                1
            } else {
                rng.random_range(1..=2)
            };
            layers.push((times.len()..times.len() + width).collect());
            times.extend(std::iter::repeat_n(t, width));
        }
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for l in 0..layers.len() - 1 {
            let (cur, next) = (&layers[l], &layers[l + 1]);
            for &s in cur {
                edges.push((s, next[rng.random_range(0..next.len())]));
            }
            for &e in next {
                let s = cur[rng.random_range(0..cur.len())];
                if !edges.iter().any(|&(_, x)| x == e) || rng.random_bool(0.3) {
                    edges.push((s, e));
                }
            }
            if l + 2 < layers.len() && rng.random_bool(0.3) {
                let far = &layers[l + 2];
                edges.push((
                    cur[rng.random_range(0..cur.len())],
                    far[rng.random_range(0..far.len())],
                ));
            }
        }
        let arcs = edges
            .into_iter()
            .map(|(s, e)| {
                let align: Vec<usize> = (0..times[e] - times[s])
                    .map(|_| rng.random_range(0..num_states))
                    .collect();
                let phone = format!("p{}", rng.random_range(0..phones));
                arc(s, e, &phone, -rng.random_range(0.0..2.0), &align, None)
            })
            .collect();
        let lat = match Lattice::new(id, nodes(&times), arcs) {
            Ok(l) => l,
            Err(_) => continue,
        };
        if count_paths(&lat) <= max_paths {
            return lat;
        }
    }
}

/// Single path of `lat` chosen uniformly at each branching node, as a
/// standalone lattice together with its timed phone sequence.
pub fn pick_path(rng: &mut ChaCha8Rng, lat: &Lattice) -> (Lattice, Vec<TimedPhone>) {
    let paths = enumerate_paths(lat);
    let path = &paths[rng.random_range(0..paths.len())];
    let mut times = vec![0];
    let mut arcs = Vec::new();
    let mut reference = Vec::new();
    for (i, &q) in path.iter().enumerate() {
        let a = &lat.arcs()[q];
        let (s, e) = (lat.arc_start_frame(q), lat.arc_end_frame(q));
        times.push(e);
        arcs.push(arc(i, i + 1, &a.phone, a.lm_logprob, &a.alignment, None));
        reference.push(TimedPhone::new(a.phone.clone(), s, e));
    }
    (
        Lattice::new(lat.utt_id.clone(), nodes(&times), arcs).unwrap(),
        reference,
    )
}

/// Random utterance whose numerator is one path of its denominator and
/// whose frame labels follow that path.
pub fn toy_utterance(
    rng: &mut ChaCha8Rng,
    id: &str,
    frames: usize,
    input_dim: usize,
    num_states: usize,
) -> Utterance {
    let den = random_lattice(rng, id, frames, num_states, 3, 200.0);
    let (num, reference) = pick_path(rng, &den);
    let mut states = vec![0; frames];
    for (q, a) in num.arcs().iter().enumerate() {
        for (k, &s) in a.alignment.iter().enumerate() {
            states[num.arc_start_frame(q) + k] = s;
        }
    }
    let features =
        FrameMatrix::from_vec(frames, input_dim, gaussian(rng, frames * input_dim)).unwrap();
    Utterance::new(
        id,
        features,
        reference,
        states,
        NumDenPair::new(num, den).unwrap(),
    )
    .unwrap()
}

/// Parameters with random weights and random biases, so that no unit sits
/// at a degenerate point.
pub fn random_params(model: &ModelSpec, seed: u64, scale: f64) -> ParamVector {
    let mut r = rng(seed);
    let v = gaussian(&mut r, model.num_params())
        .into_iter()
        .map(|x| scale * x)
        .collect();
    ParamVector::new(v, Precision::F64)
}

/// One small network of every layer kind, all mapping `input` to `k` logits.
pub fn model_zoo(input: usize, k: usize) -> Vec<(&'static str, ModelSpec)> {
    vec![
        (
            "fc",
            ModelSpec::new(
                input,
                vec![
                    LayerSpec::fc(5, Activation::Sigmoid),
                    LayerSpec::fc(k, Activation::Identity),
                ],
            )
            .unwrap(),
        ),
        (
            "tdnn",
            ModelSpec::new(
                input,
                vec![
                    LayerSpec::tdnn(4, Activation::Tanh, &[-1, 0, 2]),
                    LayerSpec::tdnn(k, Activation::Identity, &[-2, 1]),
                ],
            )
            .unwrap(),
        ),
        (
            "rnn",
            ModelSpec::new(
                input,
                vec![
                    LayerSpec::recurrent(4, Activation::Tanh, 3),
                    LayerSpec::fc(k, Activation::Identity),
                ],
            )
            .unwrap(),
        ),
        (
            "lstm",
            ModelSpec::new(
                input,
                vec![
                    LayerSpec::lstm(3, 3),
                    LayerSpec::fc(k, Activation::Identity),
                ],
            )
            .unwrap(),
        ),
    ]
}

// ------------------------------------------------------ dense curvature

/// Explicit output-layer matrices `Ĥ_t` (Gauss-Newton) and `F̂_t` (empirical
/// Fisher) of one utterance, built entry by entry from the occupancies.
pub fn output_matrices(
    utt: &Utterance,
    logits: &FrameMatrix,
    loss: &LossConfig,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let k = logits.cols();
    let outer = |a: &[f64], b: &[f64]| DMatrix::from_fn(k, k, |i, j| a[i] * b[j]);
    let diag = |a: &[f64]| DMatrix::from_fn(k, k, |i, j| if i == j { a[i] } else { 0.0 });
    let k2 = loss.kappa * loss.kappa;
    let mut h = Vec::new();
    let mut f = Vec::new();
    match loss.kind {
        LossKind::Ce => {
            for t in 0..logits.rows() {
                let y = softmax(logits.row(t));
                let mut g = y.clone();
                g[utt.states[t]] -= 1.0;
                h.push(diag(&y) - outer(&y, &y));
                f.push(outer(&g, &g));
            }
        }
        LossKind::Mmi => {
            let st = mmi_loss_and_occupancy(&utt.lattices, logits, loss).unwrap();
            for t in 0..logits.rows() {
                let gd = st.gamma_den.row(t);
                let gm = st.gamma_mmi.row(t);
                h.push((diag(gd) - outer(gd, gd)) * k2);
                f.push(outer(gm, gm) * k2);
            }
        }
        LossKind::Mpe => {
            let st = mpe_loss_and_occupancy(&utt.lattices, &utt.reference, logits, loss).unwrap();
            let gmpe = st.gamma_mpe.unwrap();
            for t in 0..logits.rows() {
                let g = st.gamma.row(t);
                let gm = st.gamma_mmi.row(t);
                h.push((diag(g) - outer(gmpe.row(t), g)) * k2);
                f.push(outer(gm, gm) * k2);
            }
        }
    }
    (h, f)
}

/// Dense `(1/N) Σ_u Σ_t J_tᵀ M_t J_t` for the Gauss-Newton and Fisher
/// output matrices.
pub fn dense_curvatures(
    model: &ModelSpec,
    params: &ParamVector,
    utts: &[&Utterance],
    loss: &LossConfig,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = params.len();
    let mut g = DMatrix::zeros(d, d);
    let mut f = DMatrix::zeros(d, d);
    for u in utts {
        let logits = ref_logit_matrix(model, params.as_slice(), &u.features);
        let js = jacobians(model, params.as_slice(), &u.features);
        let (hs, fs) = output_matrices(u, &logits, loss);
        for ((j, h), fo) in js.iter().zip(&hs).zip(&fs) {
            g += j.transpose() * h * j;
            f += j.transpose() * fo * j;
        }
    }
    let n = utts.len() as f64;
    (g / n, f / n)
}

pub fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).as_slice().to_vec()
}

/// Toy task: `n` random utterances over `k` states.
pub fn toy_batch(seed: u64, n: usize, frames: usize, input: usize, k: usize) -> Vec<Utterance> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| toy_utterance(&mut r, &format!("utt{i:02}"), frames, input, k))
        .collect()
}
