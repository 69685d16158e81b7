use super::scalar::{
    activate, activate_deriv, affine, affine_transpose_acc, sigmoid, to_f64, to_real, Real,
};
use super::{share_counts, LayerKind, LayerLayout, LayerSpec, ModelSpec};
use crate::error::{check_dim, Error, Result};
use crate::param::{FrameMatrix, ParamVector, Precision};

/// Cached activations of one forward pass over an utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTape {
    precision: Precision,
    num_params: usize,
    input: FrameMatrix,
    layers: Vec<LayerTape>,
}

#[derive(Debug, Clone, PartialEq)]
enum LayerTape {
    Dense {
        pre: Vec<f64>,
        out: Vec<f64>,
    },
    Recurrent {
        windows: Vec<RecWindow>,
        out: Vec<f64>,
    },
    Lstm {
        windows: Vec<LstmWindow>,
        out: Vec<f64>,
    },
}

/// Unfolded recurrence for one output frame: `steps x dim` values.
#[derive(Debug, Clone, PartialEq)]
struct RecWindow {
    start: usize,
    pre: Vec<f64>,
    hid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct LstmWindow {
    start: usize,
    /// Post-activation input, forget, candidate and output gates.
    gates: [Vec<f64>; 4],
    cell: Vec<f64>,
    hid: Vec<f64>,
}

impl LayerTape {
    fn out(&self) -> &[f64] {
        match self {
            LayerTape::Dense { out, .. }
            | LayerTape::Recurrent { out, .. }
            | LayerTape::Lstm { out, .. } => out,
        }
    }
}

impl ActivationTape {
    pub fn frames(&self) -> usize {
        self.input.rows()
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Output-layer activations `a^out_t`, one row per frame.
    pub fn logits(&self) -> FrameMatrix {
        let last = self.layers.last().expect("tape has layers");
        let t = self.frames();
        let out = last.out();
        FrameMatrix::from_vec(t, out.len() / t.max(1), out.to_vec()).expect("consistent tape")
    }

    /// Post-activations of layer `l` (`x_t = h(a_t)`).
    pub fn layer_output(&self, l: usize) -> &[f64] {
        self.layers[l].out()
    }

    /// Pre-activations of a dense layer, `None` for recurrent kinds.
    pub fn layer_pre_activation(&self, l: usize) -> Option<&[f64]> {
        match &self.layers[l] {
            LayerTape::Dense { pre, .. } => Some(pre),
            _ => None,
        }
    }

    fn layer_input(&self, l: usize) -> &[f64] {
        if l == 0 {
            self.input.as_slice()
        } else {
            self.layers[l - 1].out()
        }
    }
}

fn weights<'a, S>(p: &'a [S], lay: &LayerLayout, block: usize) -> (&'a [S], &'a [S]) {
    let start = lay.offset + block * lay.block_len();
    let split = start + lay.rows * lay.cols;
    (&p[start..split], &p[split..split + lay.rows])
}

fn splice_frame(t: usize, offset: i32, frames: usize) -> usize {
    (t as i64 + offset as i64).clamp(0, frames as i64 - 1) as usize
}

fn gather<S: Real>(x: &[S], in_dim: usize, t: usize, offsets: &[i32], frames: usize, z: &mut [S]) {
    for (k, &o) in offsets.iter().enumerate() {
        let src = splice_frame(t, o, frames);
        z[k * in_dim..(k + 1) * in_dim].copy_from_slice(&x[src * in_dim..(src + 1) * in_dim]);
    }
}

fn concat_into<S: Real>(a: &[S], b: &[S], z: &mut [S]) {
    z[..a.len()].copy_from_slice(a);
    z[a.len()..].copy_from_slice(b);
}

/// Forward-mode rule for a Hadamard gate:
/// `R(g ⊙ z) = R(g) ⊙ z + g ⊙ R(z)`.
pub fn gated_r(g: &[f64], r_g: &[f64], z: &[f64], r_z: &[f64]) -> Vec<f64> {
    g.iter()
        .zip(r_g)
        .zip(z.iter().zip(r_z))
        .map(|((g, rg), (z, rz))| rg * z + g * rz)
        .collect()
}

fn check_finite<S: Real>(xs: &[S], what: &'static str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Propagates an utterance through the network, caching every activation.
pub fn forward(
    model: &ModelSpec,
    params: &ParamVector,
    features: &FrameMatrix,
) -> Result<ActivationTape> {
    model.validate()?;
    check_dim("parameter vector", model.num_params(), params.len())?;
    check_dim("feature dim", model.input_dim, features.cols())?;
    if features.rows() == 0 {
        return Err(Error::Empty("utterance"));
    }
    match params.precision {
        Precision::F32 => forward_impl::<f32>(model, params, features),
        Precision::F64 => forward_impl::<f64>(model, params, features),
    }
}

fn forward_impl<S: Real>(
    model: &ModelSpec,
    params: &ParamVector,
    features: &FrameMatrix,
) -> Result<ActivationTape> {
    let p = to_real::<S>(params.as_slice());
    let frames = features.rows();
    let mut x = to_real::<S>(features.as_slice());
    let mut in_dim = model.input_dim;
    let mut layers = Vec::with_capacity(model.layers.len());

    for (layer, lay) in model.layers.iter().zip(model.layouts()) {
        let dim = layer.dim;
        let mut out = vec![S::zero(); frames * dim];
        let tape = match layer.kind {
            LayerKind::FullyConnected | LayerKind::TdnnSplice => {
                let (w, b) = weights(&p, &lay, 0);
                let mut pre = vec![S::zero(); frames * dim];
                let mut z = vec![S::zero(); lay.cols];
                for t in 0..frames {
                    gather(&x, in_dim, t, layer.offsets(), frames, &mut z);
                    let a = &mut pre[t * dim..(t + 1) * dim];
                    affine(w, b, lay.cols, &z, a);
                    for (o, &ai) in out[t * dim..(t + 1) * dim].iter_mut().zip(a.iter()) {
                        *o = activate(layer.activation, ai);
                    }
                }
                check_finite(&out, "forward activation")?;
                LayerTape::Dense {
                    pre: to_f64(&pre),
                    out: to_f64(&out),
                }
            }
            LayerKind::Recurrent => {
                let (w, b) = weights(&p, &lay, 0);
                let mut windows = Vec::with_capacity(frames);
                let mut z = vec![S::zero(); lay.cols];
                for t in 0..frames {
                    let start = (t + 1).saturating_sub(layer.unfold_steps);
                    let steps = t + 1 - start;
                    let mut pre = vec![S::zero(); steps * dim];
                    let mut hid = vec![S::zero(); steps * dim];
                    let mut h = vec![S::zero(); dim];
                    for s in 0..steps {
                        let tau = start + s;
                        concat_into(&x[tau * in_dim..(tau + 1) * in_dim], &h, &mut z);
                        let a = &mut pre[s * dim..(s + 1) * dim];
                        affine(w, b, lay.cols, &z, a);
                        for (hi, &ai) in h.iter_mut().zip(a.iter()) {
                            *hi = activate(layer.activation, ai);
                        }
                        hid[s * dim..(s + 1) * dim].copy_from_slice(&h);
                    }
                    out[t * dim..(t + 1) * dim].copy_from_slice(&h);
                    windows.push(RecWindow {
                        start,
                        pre: to_f64(&pre),
                        hid: to_f64(&hid),
                    });
                }
                check_finite(&out, "forward activation")?;
                LayerTape::Recurrent {
                    windows,
                    out: to_f64(&out),
                }
            }
            LayerKind::Lstm => {
                let blocks: Vec<_> = (0..4).map(|k| weights(&p, &lay, k)).collect();
                let mut windows = Vec::with_capacity(frames);
                let mut z = vec![S::zero(); lay.cols];
                let mut a = vec![S::zero(); dim];
                for t in 0..frames {
                    let start = (t + 1).saturating_sub(layer.unfold_steps);
                    let steps = t + 1 - start;
                    let mut gates: [Vec<S>; 4] =
                        std::array::from_fn(|_| vec![S::zero(); steps * dim]);
                    let mut cell = vec![S::zero(); steps * dim];
                    let mut hid = vec![S::zero(); steps * dim];
                    let mut h = vec![S::zero(); dim];
                    let mut c = vec![S::zero(); dim];
                    for s in 0..steps {
                        let tau = start + s;
                        concat_into(&x[tau * in_dim..(tau + 1) * in_dim], &h, &mut z);
                        for (k, (w, b)) in blocks.iter().enumerate() {
                            affine(w, b, lay.cols, &z, &mut a);
                            let g = &mut gates[k][s * dim..(s + 1) * dim];
                            for (gi, &ai) in g.iter_mut().zip(&a) {
                                *gi = if k == 2 { ai.tanh() } else { sigmoid(ai) };
                            }
                        }
                        let r = s * dim..(s + 1) * dim;
                        for j in 0..dim {
                            let (i, f, g, o) = (
                                gates[0][r.start + j],
                                gates[1][r.start + j],
                                gates[2][r.start + j],
                                gates[3][r.start + j],
                            );
                            c[j] = f * c[j] + i * g;
                            h[j] = o * c[j].tanh();
                        }
                        cell[r.clone()].copy_from_slice(&c);
                        hid[r].copy_from_slice(&h);
                    }
                    out[t * dim..(t + 1) * dim].copy_from_slice(&h);
                    windows.push(LstmWindow {
                        start,
                        gates: [
                            to_f64(&gates[0]),
                            to_f64(&gates[1]),
                            to_f64(&gates[2]),
                            to_f64(&gates[3]),
                        ],
                        cell: to_f64(&cell),
                        hid: to_f64(&hid),
                    });
                }
                check_finite(&out, "forward activation")?;
                LayerTape::Lstm {
                    windows,
                    out: to_f64(&out),
                }
            }
        };
        x = out;
        in_dim = dim;
        layers.push(tape);
    }

    Ok(ActivationTape {
        precision: params.precision,
        num_params: params.len(),
        input: features.clone(),
        layers,
    })
}

fn check_tape(model: &ModelSpec, params: &ParamVector, tape: &ActivationTape) -> Result<()> {
    model.validate()?;
    check_dim("parameter vector", model.num_params(), params.len())?;
    check_dim("tape parameter count", tape.num_params, params.len())?;
    check_dim("tape layers", model.layers.len(), tape.layers.len())?;
    if tape.precision != params.precision {
        return Err(Error::InvalidModel(
            "tape precision differs from parameter precision".into(),
        ));
    }
    Ok(())
}

/// Forward-mode directional derivative `R(a^out_t) = J_t v` for every frame.
pub fn r_forward(
    model: &ModelSpec,
    params: &ParamVector,
    tape: &ActivationTape,
    v: &[f64],
) -> Result<FrameMatrix> {
    check_tape(model, params, tape)?;
    check_dim("direction", params.len(), v.len())?;
    match params.precision {
        Precision::F32 => r_forward_impl::<f32>(model, params, tape, v),
        Precision::F64 => r_forward_impl::<f64>(model, params, tape, v),
    }
}

fn r_forward_impl<S: Real>(
    model: &ModelSpec,
    params: &ParamVector,
    tape: &ActivationTape,
    v: &[f64],
) -> Result<FrameMatrix> {
    let p = to_real::<S>(params.as_slice());
    let pv = to_real::<S>(v);
    let frames = tape.frames();
    let mut in_dim = model.input_dim;
    // Features do not depend on the parameters.
    let mut rx = vec![S::zero(); frames * in_dim];

    for (l, (layer, lay)) in model.layers.iter().zip(model.layouts()).enumerate() {
        let dim = layer.dim;
        let x = to_real::<S>(tape.layer_input(l));
        let mut rout = vec![S::zero(); frames * dim];
        let mut z = vec![S::zero(); lay.cols];
        let mut rz = vec![S::zero(); lay.cols];
        let mut ra = vec![S::zero(); dim];
        match &tape.layers[l] {
            LayerTape::Dense { pre, out } => {
                let (w, _) = weights(&p, &lay, 0);
                let (vw, vb) = weights(&pv, &lay, 0);
                for t in 0..frames {
                    gather(&x, in_dim, t, layer.offsets(), frames, &mut z);
                    gather(&rx, in_dim, t, layer.offsets(), frames, &mut rz);
                    affine(vw, vb, lay.cols, &z, &mut ra);
                    for (r, rar) in ra.iter_mut().enumerate() {
                        let row = &w[r * lay.cols..(r + 1) * lay.cols];
                        *rar = *rar + row.iter().zip(&rz).map(|(a, b)| *a * *b).sum::<S>();
                    }
                    for j in 0..dim {
                        let k = t * dim + j;
                        let d = activate_deriv(layer.activation, S::of(pre[k]), S::of(out[k]));
                        rout[k] = d * ra[j];
                    }
                }
            }
            LayerTape::Recurrent { windows, .. } => {
                let (w, _) = weights(&p, &lay, 0);
                let (vw, vb) = weights(&pv, &lay, 0);
                let zeros = vec![S::zero(); dim];
                for (t, win) in windows.iter().enumerate() {
                    let pre = to_real::<S>(&win.pre);
                    let hid = to_real::<S>(&win.hid);
                    let mut rh = vec![S::zero(); dim];
                    for s in 0..pre.len() / dim {
                        let tau = win.start + s;
                        let h_prev = if s == 0 {
                            &zeros[..]
                        } else {
                            &hid[(s - 1) * dim..s * dim]
                        };
                        concat_into(&x[tau * in_dim..(tau + 1) * in_dim], h_prev, &mut z);
                        concat_into(&rx[tau * in_dim..(tau + 1) * in_dim], &rh, &mut rz);
                        affine(vw, vb, lay.cols, &z, &mut ra);
                        for (r, rar) in ra.iter_mut().enumerate() {
                            let row = &w[r * lay.cols..(r + 1) * lay.cols];
                            *rar = *rar + row.iter().zip(&rz).map(|(a, b)| *a * *b).sum::<S>();
                        }
                        for j in 0..dim {
                            let k = s * dim + j;
                            rh[j] = activate_deriv(layer.activation, pre[k], hid[k]) * ra[j];
                        }
                    }
                    rout[t * dim..(t + 1) * dim].copy_from_slice(&rh);
                }
            }
            LayerTape::Lstm { windows, .. } => {
                let blocks: Vec<_> = (0..4).map(|k| weights(&p, &lay, k)).collect();
                let vblocks: Vec<_> = (0..4).map(|k| weights(&pv, &lay, k)).collect();
                let zeros = vec![S::zero(); dim];
                let mut rgate: [Vec<S>; 4] = std::array::from_fn(|_| vec![S::zero(); dim]);
                for (t, win) in windows.iter().enumerate() {
                    let gates: Vec<Vec<S>> = win.gates.iter().map(|g| to_real::<S>(g)).collect();
                    let cell = to_real::<S>(&win.cell);
                    let hid = to_real::<S>(&win.hid);
                    let mut rh = vec![S::zero(); dim];
                    let mut rc = vec![S::zero(); dim];
                    for s in 0..cell.len() / dim {
                        let tau = win.start + s;
                        let h_prev = if s == 0 {
                            &zeros[..]
                        } else {
                            &hid[(s - 1) * dim..s * dim]
                        };
                        let c_prev = if s == 0 {
                            &zeros[..]
                        } else {
                            &cell[(s - 1) * dim..s * dim]
                        };
                        concat_into(&x[tau * in_dim..(tau + 1) * in_dim], h_prev, &mut z);
                        concat_into(&rx[tau * in_dim..(tau + 1) * in_dim], &rh, &mut rz);
                        for k in 0..4 {
                            let (w, _) = blocks[k];
                            let (vw, vb) = vblocks[k];
                            affine(vw, vb, lay.cols, &z, &mut ra);
                            for j in 0..dim {
                                let row = &w[j * lay.cols..(j + 1) * lay.cols];
                                let r_pre =
                                    ra[j] + row.iter().zip(&rz).map(|(a, b)| *a * *b).sum::<S>();
                                let g = gates[k][s * dim + j];
                                rgate[k][j] = if k == 2 {
                                    (S::one() - g * g) * r_pre
                                } else {
                                    g * (S::one() - g) * r_pre
                                };
                            }
                        }
                        for j in 0..dim {
                            let k = s * dim + j;
                            let (i, f, g, o) = (gates[0][k], gates[1][k], gates[2][k], gates[3][k]);
                            // c = f ⊙ c_prev + i ⊙ g, h = o ⊙ tanh(c), each product by the gating rule.
                            let r_c = rgate[1][j] * c_prev[j]
                                + f * rc[j]
                                + rgate[0][j] * g
                                + i * rgate[2][j];
                            let tc = cell[k].tanh();
                            rh[j] = rgate[3][j] * tc + o * (S::one() - tc * tc) * r_c;
                            rc[j] = r_c;
                        }
                    }
                    rout[t * dim..(t + 1) * dim].copy_from_slice(&rh);
                }
            }
        }
        rx = rout;
        in_dim = dim;
    }

    check_finite(&rx, "directional derivative")?;
    FrameMatrix::from_vec(frames, in_dim, to_f64(&rx))
}

/// Error backpropagation: returns `sum_t J_t^T g_t`, optionally divided
/// elementwise by the parameter share counts.
pub fn backprop(
    model: &ModelSpec,
    params: &ParamVector,
    tape: &ActivationTape,
    output_grads: &FrameMatrix,
    normalize_by_share: bool,
) -> Result<ParamVector> {
    check_tape(model, params, tape)?;
    check_dim("output gradient frames", tape.frames(), output_grads.rows())?;
    check_dim("output gradient dim", model.output_dim, output_grads.cols())?;
    let mut grad = match params.precision {
        Precision::F32 => backprop_impl::<f32>(model, params, tape, output_grads),
        Precision::F64 => backprop_impl::<f64>(model, params, tape, output_grads),
    }?;
    if normalize_by_share {
        let counts = share_counts(model);
        for (g, &c) in grad.iter_mut().zip(counts.as_slice()) {
            *g /= c as f64;
        }
    }
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("backpropagated gradient"));
    }
    Ok(ParamVector::new(grad, params.precision))
}

fn acc_outer<S: Real>(grad: &mut [f64], lay: &LayerLayout, block: usize, da: &[S], z: &[S]) {
    for (r, &d) in da.iter().enumerate() {
        if d == S::zero() {
            continue;
        }
        let d = d.f64();
        let base = lay.weight_index(block, r, 0);
        for (gi, zi) in grad[base..base + lay.cols].iter_mut().zip(z) {
            *gi += d * zi.f64();
        }
        grad[lay.bias_index(block, r)] += d;
    }
}

fn backprop_impl<S: Real>(
    model: &ModelSpec,
    params: &ParamVector,
    tape: &ActivationTape,
    output_grads: &FrameMatrix,
) -> Result<Vec<f64>> {
    let p = to_real::<S>(params.as_slice());
    let frames = tape.frames();
    let layouts = model.layouts();
    let mut grad = vec![0.0f64; params.len()];
    let mut delta = to_real::<S>(output_grads.as_slice());

    for l in (0..model.layers.len()).rev() {
        let layer: &LayerSpec = &model.layers[l];
        let lay = layouts[l];
        let dim = layer.dim;
        let in_dim = if l == 0 {
            model.input_dim
        } else {
            model.layers[l - 1].dim
        };
        let need_input_grad = l > 0;
        let x = to_real::<S>(tape.layer_input(l));
        let mut dprev = vec![S::zero(); frames * in_dim];
        let mut z = vec![S::zero(); lay.cols];
        let mut dz = vec![S::zero(); lay.cols];
        let mut da = vec![S::zero(); dim];

        match &tape.layers[l] {
            LayerTape::Dense { pre, out } => {
                let (w, _) = weights(&p, &lay, 0);
                for t in 0..frames {
                    for j in 0..dim {
                        let k = t * dim + j;
                        da[j] = delta[k]
                            * activate_deriv(layer.activation, S::of(pre[k]), S::of(out[k]));
                    }
                    gather(&x, in_dim, t, layer.offsets(), frames, &mut z);
                    acc_outer(&mut grad, &lay, 0, &da, &z);
                    if need_input_grad {
                        dz.iter_mut().for_each(|d| *d = S::zero());
                        affine_transpose_acc(w, lay.cols, &da, &mut dz);
                        for (kk, &o) in layer.offsets().iter().enumerate() {
                            let dst = splice_frame(t, o, frames);
                            for i in 0..in_dim {
                                dprev[dst * in_dim + i] =
                                    dprev[dst * in_dim + i] + dz[kk * in_dim + i];
                            }
                        }
                    }
                }
            }
            LayerTape::Recurrent { windows, .. } => {
                let (w, _) = weights(&p, &lay, 0);
                let zeros = vec![S::zero(); dim];
                for (t, win) in windows.iter().enumerate() {
                    let pre = to_real::<S>(&win.pre);
                    let hid = to_real::<S>(&win.hid);
                    let mut dh = delta[t * dim..(t + 1) * dim].to_vec();
                    for s in (0..pre.len() / dim).rev() {
                        let tau = win.start + s;
                        for j in 0..dim {
                            let k = s * dim + j;
                            da[j] = dh[j] * activate_deriv(layer.activation, pre[k], hid[k]);
                        }
                        let h_prev = if s == 0 {
                            &zeros[..]
                        } else {
                            &hid[(s - 1) * dim..s * dim]
                        };
                        concat_into(&x[tau * in_dim..(tau + 1) * in_dim], h_prev, &mut z);
                        acc_outer(&mut grad, &lay, 0, &da, &z);
                        dz.iter_mut().for_each(|d| *d = S::zero());
                        affine_transpose_acc(w, lay.cols, &da, &mut dz);
                        if need_input_grad {
                            for i in 0..in_dim {
                                dprev[tau * in_dim + i] = dprev[tau * in_dim + i] + dz[i];
                            }
                        }
                        dh.copy_from_slice(&dz[in_dim..]);
                    }
                }
            }
            LayerTape::Lstm { windows, .. } => {
                let blocks: Vec<_> = (0..4).map(|k| weights(&p, &lay, k)).collect();
                let zeros = vec![S::zero(); dim];
                let mut dgate: [Vec<S>; 4] = std::array::from_fn(|_| vec![S::zero(); dim]);
                for (t, win) in windows.iter().enumerate() {
                    let gates: Vec<Vec<S>> = win.gates.iter().map(|g| to_real::<S>(g)).collect();
                    let cell = to_real::<S>(&win.cell);
                    let hid = to_real::<S>(&win.hid);
                    let mut dh = delta[t * dim..(t + 1) * dim].to_vec();
                    let mut dc = vec![S::zero(); dim];
                    for s in (0..cell.len() / dim).rev() {
                        let tau = win.start + s;
                        let h_prev = if s == 0 {
                            &zeros[..]
                        } else {
                            &hid[(s - 1) * dim..s * dim]
                        };
                        let c_prev = if s == 0 {
                            &zeros[..]
                        } else {
                            &cell[(s - 1) * dim..s * dim]
                        };
                        for j in 0..dim {
                            let k = s * dim + j;
                            let (i, f, g, o) = (gates[0][k], gates[1][k], gates[2][k], gates[3][k]);
                            let tc = cell[k].tanh();
                            let d_o = dh[j] * tc;
                            let d_c = dc[j] + dh[j] * o * (S::one() - tc * tc);
                            let d_i = d_c * g;
                            let d_g = d_c * i;
                            let d_f = d_c * c_prev[j];
                            dgate[0][j] = d_i * i * (S::one() - i);
                            dgate[1][j] = d_f * f * (S::one() - f);
                            dgate[2][j] = d_g * (S::one() - g * g);
                            dgate[3][j] = d_o * o * (S::one() - o);
                            dc[j] = d_c * f;
                        }
                        concat_into(&x[tau * in_dim..(tau + 1) * in_dim], h_prev, &mut z);
                        dz.iter_mut().for_each(|d| *d = S::zero());
                        for (k, (w, _)) in blocks.iter().enumerate() {
                            acc_outer(&mut grad, &lay, k, &dgate[k], &z);
                            affine_transpose_acc(w, lay.cols, &dgate[k], &mut dz);
                        }
                        if need_input_grad {
                            for i in 0..in_dim {
                                dprev[tau * in_dim + i] = dprev[tau * in_dim + i] + dz[i];
                            }
                        }
                        dh.copy_from_slice(&dz[in_dim..]);
                    }
                }
            }
        }
        delta = dprev;
    }
    Ok(grad)
}
