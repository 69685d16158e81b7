//! Text checkpoint container.
//!
//! ```text
//! NGHF-CHECKPOINT v1
//! precision f64
//! input_dim 16
//! layers fc:sigmoid:48;fc:identity:24
//! num_params 1992
//! 3fb99999999999a0
//! ...
//! ```
//!
//! Each parameter is written as the hex image of its `f64` bits, so a
//! read/write cycle is bit-exact.

use std::fs;
use std::path::Path;

use super::ModelSpec;
use crate::error::{Error, Result};
use crate::param::{ParamVector, Precision};

const MAGIC: &str = "NGHF-CHECKPOINT";
const VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub params: ParamVector,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{MAGIC} {VERSION}\nprecision {}\ninput_dim {}\nlayers {}\nnum_params {}\n",
            self.params.precision,
            self.model.input_dim,
            self.model.layers_string(),
            self.params.len()
        );
        for v in &self.params.values {
            s.push_str(&format!("{:016x}\n", v.to_bits()));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |key: &str| -> Result<(usize, String)> {
            let (i, line) = lines.next().ok_or(Error::Parse {
                line: 0,
                msg: format!("missing `{key}` line"),
            })?;
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `{key} ...`"),
                })?;
            Ok((i + 1, rest.trim().to_string()))
        };
        let (line, version) = next(MAGIC)?;
        if version != VERSION {
            return Err(Error::Parse {
                line,
                msg: format!("unsupported checkpoint version `{version}`"),
            });
        }
        let (line, precision) = next("precision")?;
        let precision: Precision = precision.parse().map_err(|_| Error::Parse {
            line,
            msg: "bad precision".into(),
        })?;
        let (line, input_dim) = next("input_dim")?;
        let input_dim: usize = input_dim.parse().map_err(|_| Error::Parse {
            line,
            msg: "bad input_dim".into(),
        })?;
        let (line, layers) = next("layers")?;
        let model = ModelSpec::parse_layers(input_dim, &layers).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let (line, n) = next("num_params")?;
        let n: usize = n.parse().map_err(|_| Error::Parse {
            line,
            msg: "bad num_params".into(),
        })?;
        if n != model.num_params() {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "num_params {n} does not match model ({})",
                    model.num_params()
                ),
            });
        }
        let mut values = Vec::with_capacity(n);
        for (i, l) in lines {
            let l = l.trim();
            if l.is_empty() {
                continue;
            }
            let bits = u64::from_str_radix(l, 16).map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad parameter value `{l}`"),
            })?;
            values.push(f64::from_bits(bits));
        }
        if values.len() != n {
            return Err(Error::Parse {
                line: text.lines().count(),
                msg: format!("expected {n} parameters, found {}", values.len()),
            });
        }
        Ok(Self {
            model,
            params: ParamVector::new(values, precision),
        })
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path.as_ref(), ckpt.to_text()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_text(&text)
}
