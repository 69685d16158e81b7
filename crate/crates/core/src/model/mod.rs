//! Network architectures (fully connected, TDNN splicing, windowed Elman
//! recurrence and LSTM), their forward pass, error backpropagation and the
//! forward-mode directional derivative used by the curvature products.
//!
//! Recurrent layers are unfolded per output frame: the value of a recurrent
//! layer at frame `t` is the final state of the recurrence run over the inputs
//! `t-u+1 ..= t` starting from a zero hidden (and cell) state. Each layer is
//! therefore a pure sequence-to-sequence map, and its parameters are replicated
//! exactly `u` times per output frame.

mod checkpoint;
mod net;
mod scalar;
mod share;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use net::{backprop, forward, gated_r, r_forward, ActivationTape};
pub use share::{share_counts, ShareCounts};

use crate::error::{Error, Result};
use crate::param::{ParamVector, Precision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-a).exp()),
            Activation::Tanh => a.tanh(),
            Activation::Relu => a.max(0.0),
            Activation::Identity => a,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::InvalidModel(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    FullyConnected,
    TdnnSplice,
    Recurrent,
    Lstm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Ignored by LSTM layers, whose gate and cell nonlinearities are fixed.
    pub activation: Activation,
    pub dim: usize,
    /// TDNN only. Frames outside the utterance replicate the boundary frame.
    pub splice_offsets: Vec<i32>,
    /// Recurrent kinds only.
    pub unfold_steps: usize,
}

impl LayerSpec {
    pub fn fc(dim: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::FullyConnected,
            activation,
            dim,
            splice_offsets: Vec::new(),
            unfold_steps: 1,
        }
    }

    pub fn tdnn(dim: usize, activation: Activation, offsets: &[i32]) -> Self {
        Self {
            kind: LayerKind::TdnnSplice,
            activation,
            dim,
            splice_offsets: offsets.to_vec(),
            unfold_steps: 1,
        }
    }

    pub fn recurrent(dim: usize, activation: Activation, unfold_steps: usize) -> Self {
        Self {
            kind: LayerKind::Recurrent,
            activation,
            dim,
            splice_offsets: Vec::new(),
            unfold_steps,
        }
    }

    pub fn lstm(dim: usize, unfold_steps: usize) -> Self {
        Self {
            kind: LayerKind::Lstm,
            activation: Activation::Tanh,
            dim,
            splice_offsets: Vec::new(),
            unfold_steps,
        }
    }

    /// Offsets of the frames concatenated into this layer's input.
    pub(crate) fn offsets(&self) -> &[i32] {
        match self.kind {
            LayerKind::TdnnSplice => &self.splice_offsets,
            _ => &[0],
        }
    }

    pub(crate) fn is_recurrent(&self) -> bool {
        matches!(self.kind, LayerKind::Recurrent | LayerKind::Lstm)
    }

    /// Columns of each weight matrix given the previous layer's width.
    pub(crate) fn weight_cols(&self, in_dim: usize) -> usize {
        match self.kind {
            LayerKind::FullyConnected => in_dim,
            LayerKind::TdnnSplice => in_dim * self.splice_offsets.len(),
            LayerKind::Recurrent | LayerKind::Lstm => in_dim + self.dim,
        }
    }

    /// Number of (weight, bias) blocks: four gates for an LSTM, one otherwise.
    pub(crate) fn blocks(&self) -> usize {
        match self.kind {
            LayerKind::Lstm => 4,
            _ => 1,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidModel(format!("layer {index}: {msg}")));
        if self.dim == 0 {
            return err("dim must be positive".into());
        }
        match self.kind {
            LayerKind::TdnnSplice => {
                if self.splice_offsets.is_empty() {
                    return err("TDNN layer needs at least one splice offset".into());
                }
                if self.splice_offsets.windows(2).any(|w| w[0] >= w[1]) {
                    return err("splice offsets must be strictly increasing".into());
                }
            }
            LayerKind::Recurrent | LayerKind::Lstm => {
                if self.unfold_steps == 0 {
                    return err("unfold_steps must be at least 1".into());
                }
            }
            LayerKind::FullyConnected => {}
        }
        Ok(())
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LayerKind::FullyConnected => write!(f, "fc:{}:{}", self.activation, self.dim),
            LayerKind::TdnnSplice => {
                let offs: Vec<String> = self.splice_offsets.iter().map(i32::to_string).collect();
                write!(
                    f,
                    "tdnn:{}:{}:{}",
                    self.activation,
                    self.dim,
                    offs.join(",")
                )
            }
            LayerKind::Recurrent => {
                write!(
                    f,
                    "rnn:{}:{}:{}",
                    self.activation, self.dim, self.unfold_steps
                )
            }
            LayerKind::Lstm => write!(f, "lstm:{}:{}", self.dim, self.unfold_steps),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    /// `fc:<act>:<dim>`, `tdnn:<act>:<dim>:<o1,o2,..>`, `rnn:<act>:<dim>:<u>`,
    /// `lstm:<dim>:<u>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidModel(format!("malformed layer `{s}`"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| p.trim().parse::<usize>().map_err(|_| bad());
        match parts.as_slice() {
            ["fc", act, dim] => Ok(LayerSpec::fc(num(dim)?, act.parse()?)),
            ["tdnn", act, dim, offs] => {
                let offsets = offs
                    .split(',')
                    .map(|o| o.trim().parse::<i32>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                Ok(LayerSpec::tdnn(num(dim)?, act.parse()?, &offsets))
            }
            ["rnn", act, dim, u] => Ok(LayerSpec::recurrent(num(dim)?, act.parse()?, num(u)?)),
            ["lstm", dim, u] => Ok(LayerSpec::lstm(num(dim)?, num(u)?)),
            _ => Err(bad()),
        }
    }
}

/// Placement of one layer's parameters in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub blocks: usize,
}

impl LayerLayout {
    pub fn block_len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn len(&self) -> usize {
        self.blocks * self.block_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of weight `(row, col)` in `block`.
    pub fn weight_index(&self, block: usize, row: usize, col: usize) -> usize {
        self.offset + block * self.block_len() + row * self.cols + col
    }

    pub fn bias_index(&self, block: usize, row: usize) -> usize {
        self.offset + block * self.block_len() + self.rows * self.cols + row
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Builds and validates a model; the output dimension is the last layer's.
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let output_dim = layers.last().map_or(0, |l| l.dim);
        let spec = Self {
            input_dim,
            output_dim,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidModel("input_dim must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidModel("model has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
        }
        let last = self.layers.last().expect("non-empty");
        if last.dim != self.output_dim {
            return Err(Error::InvalidModel(format!(
                "output_dim {} differs from last layer dim {}",
                self.output_dim, last.dim
            )));
        }
        Ok(())
    }

    /// Parameter layout in canonical order: layers bottom-up, and within a
    /// layer each block as a row-major weight matrix followed by its bias.
    pub fn layouts(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        let mut in_dim = self.input_dim;
        self.layers
            .iter()
            .map(|layer| {
                let lay = LayerLayout {
                    offset,
                    rows: layer.dim,
                    cols: layer.weight_cols(in_dim),
                    blocks: layer.blocks(),
                };
                offset += lay.len();
                in_dim = layer.dim;
                lay
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layouts().iter().map(LayerLayout::len).sum()
    }

    /// Random initialisation: weights uniform in `±1/sqrt(fan_in)`, zero biases
    /// except LSTM forget gates, which start at one.
    pub fn init_params(&self, seed: u64, precision: Precision) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; self.num_params()];
        for (layer, lay) in self.layers.iter().zip(self.layouts()) {
            let scale = 1.0 / (lay.cols as f64).sqrt();
            for b in 0..lay.blocks {
                for r in 0..lay.rows {
                    for c in 0..lay.cols {
                        values[lay.weight_index(b, r, c)] = rng.random_range(-scale..scale);
                    }
                    if layer.kind == LayerKind::Lstm && b == 1 {
                        values[lay.bias_index(b, r)] = 1.0;
                    }
                }
            }
        }
        ParamVector::new(values, precision)
    }

    /// Compact one-line form, `;`-separated layer strings.
    pub fn layers_string(&self) -> String {
        let parts: Vec<String> = self.layers.iter().map(LayerSpec::to_string).collect();
        parts.join(";")
    }

    pub fn parse_layers(input_dim: usize, s: &str) -> Result<Self> {
        let layers = s
            .split(';')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<LayerSpec>>>()?;
        Self::new(input_dim, layers)
    }
}
