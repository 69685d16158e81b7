use num_traits::Float;
use std::fmt::Debug;
use std::iter::Sum;

use super::Activation;

/// Arithmetic used inside the network passes.
pub(crate) trait Real: Float + Sum + Debug + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn f64(self) -> f64 {
        self
    }
}

pub(crate) fn sigmoid<S: Real>(a: S) -> S {
    S::one() / (S::one() + (-a).exp())
}

pub(crate) fn activate<S: Real>(act: Activation, a: S) -> S {
    match act {
        Activation::Sigmoid => sigmoid(a),
        Activation::Tanh => a.tanh(),
        Activation::Relu => a.max(S::zero()),
        Activation::Identity => a,
    }
}

/// `h'(a)` expressed through the pre-activation `a` and output `x = h(a)`.
/// The ReLU derivative at exactly zero is taken to be zero.
pub(crate) fn activate_deriv<S: Real>(act: Activation, a: S, x: S) -> S {
    match act {
        Activation::Sigmoid => x * (S::one() - x),
        Activation::Tanh => S::one() - x * x,
        Activation::Relu => {
            if a > S::zero() {
                S::one()
            } else {
                S::zero()
            }
        }
        Activation::Identity => S::one(),
    }
}

pub(crate) fn to_real<S: Real>(xs: &[f64]) -> Vec<S> {
    xs.iter().map(|&x| S::of(x)).collect()
}

pub(crate) fn to_f64<S: Real>(xs: &[S]) -> Vec<f64> {
    xs.iter().map(|&x| x.f64()).collect()
}

/// `out = W z + b` for a row-major `rows x cols` matrix.
pub(crate) fn affine<S: Real>(w: &[S], b: &[S], cols: usize, z: &[S], out: &mut [S]) {
    debug_assert_eq!(z.len(), cols);
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (wi, zi) in row.iter().zip(z) {
            acc = acc + *wi * *zi;
        }
        *o = acc;
    }
}

/// `out += W^T d`.
pub(crate) fn affine_transpose_acc<S: Real>(w: &[S], cols: usize, d: &[S], out: &mut [S]) {
    for (r, &dr) in d.iter().enumerate() {
        if dr == S::zero() {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, wi) in out.iter_mut().zip(row) {
            *o = *o + *wi * dr;
        }
    }
}
