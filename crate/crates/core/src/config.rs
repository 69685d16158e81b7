//! `key = value` configuration files. `#` starts a comment; unknown and
//! repeated keys are errors.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::optim::{CurvatureKind, OptimizerConfig, OptimizerKind, SelectionSet};
use crate::param::Precision;
use crate::synth::GenConfig;

/// Parsed `(line, key, value)` entries.
pub fn parse_kv(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected `key = value`, got `{body}`"),
        })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "empty key".into(),
            });
        }
        if out.iter().any(|(_, seen, _)| *seen == k) {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate key `{k}`"),
            });
        }
        out.push((line, k, v));
    }
    Ok(out)
}

pub(crate) fn val<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e: T::Err| Error::Parse {
        line,
        msg: format!("bad value `{v}` for `{key}`: {e}"),
    })
}

fn flag(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse {
            line,
            msg: format!("bad value `{v}` for `{key}`: expected on/off"),
        }),
    }
}

pub(crate) fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

pub(crate) fn unknown(line: usize, key: &str) -> Error {
    Error::Parse {
        line,
        msg: format!("unknown key `{key}`"),
    }
}

pub(crate) fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorPolicy {
    Uniform,
    #[default]
    Estimated,
}

impl FromStr for PriorPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PriorPolicy::Uniform),
            "estimated" => Ok(PriorPolicy::Estimated),
            other => Err(Error::Config(format!("unknown prior policy `{other}`"))),
        }
    }
}

impl std::fmt::Display for PriorPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PriorPolicy::Uniform => "uniform",
            PriorPolicy::Estimated => "estimated",
        })
    }
}

/// Everything a `train` run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    /// Hidden and output layers, e.g. `rnn:tanh:32:8;fc:identity:24`.
    pub layers: String,
    pub loss: LossKind,
    pub kappa: f64,
    pub priors: PriorPolicy,
    pub optim: OptimizerConfig,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    pub workers: usize,
    /// Checkpoint to start from instead of a random initialisation.
    pub init: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("runs/default"),
            layers: "rnn:tanh:32:8;fc:identity:24".into(),
            loss: LossKind::Mpe,
            kappa: 1.0,
            priors: PriorPolicy::Estimated,
            optim: OptimizerConfig::default(),
            epochs: 2,
            seed: 1,
            precision: Precision::F64,
            workers: 1,
            init: None,
        }
    }
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (line, k, v) in parse_kv(text)? {
            let o = &mut c.optim;
            match k.as_str() {
                "data" => c.data = PathBuf::from(&v),
                "out" => c.out = PathBuf::from(&v),
                "layers" => c.layers = v.clone(),
                "loss" => c.loss = val(line, &k, &v)?,
                "kappa" => c.kappa = val(line, &k, &v)?,
                "priors" => c.priors = val(line, &k, &v)?,
                "optimizer" => o.kind = val(line, &k, &v)?,
                "learning_rate" => o.learning_rate = val(line, &k, &v)?,
                "momentum" => o.momentum = val(line, &k, &v)?,
                "beta1" => o.beta1 = val(line, &k, &v)?,
                "beta2" => o.beta2 = val(line, &k, &v)?,
                "epsilon" => o.epsilon = val(line, &k, &v)?,
                "lambda" => o.lambda = val(line, &k, &v)?,
                "inner_ng_iters" => o.inner_ng_iters = val(line, &k, &v)?,
                "cg_iters" => o.cg.max_iters = val(line, &k, &v)?,
                "cg_damping" => o.cg.damping = val(line, &k, &v)?,
                "cg_stabilize" => o.cg.stabilize = flag(line, &k, &v)?,
                "cg_precondition" => o.cg.precondition = flag(line, &k, &v)?,
                "cg_eval_every" => o.cg.eval_every = val(line, &k, &v)?,
                "curvature" => {
                    o.curvature = match v.as_str() {
                        "auto" => None,
                        s => Some(val::<CurvatureKind>(line, &k, s)?),
                    }
                }
                "gradient_batch" => o.gradient_batch_size = val(line, &k, &v)?,
                "cg_batch" => o.cg_batch_size = val(line, &k, &v)?,
                "updates_per_epoch" => o.updates_per_epoch = val(line, &k, &v)?,
                "select_on" => {
                    o.select_on = match v.as_str() {
                        "cg" => SelectionSet::CgBatch,
                        "valid" => SelectionSet::Validation,
                        _ => {
                            return Err(Error::Parse {
                                line,
                                msg: format!("select_on must be cg or valid, got `{v}`"),
                            })
                        }
                    }
                }
                "epochs" => c.epochs = val(line, &k, &v)?,
                "seed" => c.seed = val(line, &k, &v)?,
                "precision" => c.precision = val(line, &k, &v)?,
                "workers" => c.workers = val(line, &k, &v)?,
                "init" => c.init = (!v.is_empty() && v != "none").then(|| PathBuf::from(&v)),
                _ => return Err(unknown(line, &k)),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&read(path.as_ref())?)
    }

    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value, in a form `from_text` accepts.
    pub fn to_text(&self) -> String {
        let o = &self.optim;
        let mut lines = vec![
            format!("data = {}", self.data.display()),
            format!("out = {}", self.out.display()),
            format!("layers = {}", self.layers),
            format!("loss = {}", self.loss),
            format!("kappa = {}", self.kappa),
            format!("priors = {}", self.priors),
            format!("optimizer = {}", o.kind),
            format!("learning_rate = {}", o.learning_rate),
            format!("momentum = {}", o.momentum),
            format!("beta1 = {}", o.beta1),
            format!("beta2 = {}", o.beta2),
            format!("epsilon = {}", o.epsilon),
            format!("lambda = {}", o.lambda),
            format!("inner_ng_iters = {}", o.inner_ng_iters),
            format!("cg_iters = {}", o.cg.max_iters),
            format!("cg_damping = {}", o.cg.damping),
            format!("cg_stabilize = {}", on_off(o.cg.stabilize)),
            format!("cg_precondition = {}", on_off(o.cg.precondition)),
            format!("cg_eval_every = {}", o.cg.eval_every),
            format!(
                "curvature = {}",
                o.curvature.map_or("auto".to_string(), |c| c.to_string())
            ),
            format!("gradient_batch = {}", o.gradient_batch_size),
            format!("cg_batch = {}", o.cg_batch_size),
            format!("updates_per_epoch = {}", o.updates_per_epoch),
            format!(
                "select_on = {}",
                match o.select_on {
                    SelectionSet::CgBatch => "cg",
                    SelectionSet::Validation => "valid",
                }
            ),
            format!("epochs = {}", self.epochs),
            format!("seed = {}", self.seed),
            format!("precision = {}", self.precision),
            format!("workers = {}", self.workers),
        ];
        lines.push(format!(
            "init = {}",
            self.init
                .as_ref()
                .map_or("none".into(), |p| p.display().to_string())
        ));
        lines.join("\n") + "\n"
    }

    pub fn optimizer(&self) -> OptimizerKind {
        self.optim.kind
    }
}

impl GenConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (line, k, v) in parse_kv(text)? {
            match k.as_str() {
                "seed" => c.seed = val(line, &k, &v)?,
                "train_utts" => c.train_utts = val(line, &k, &v)?,
                "valid_utts" => c.valid_utts = val(line, &k, &v)?,
                "phones" => c.phones = val(line, &k, &v)?,
                "states_per_phone" => c.states_per_phone = val(line, &k, &v)?,
                "input_dim" => c.input_dim = val(line, &k, &v)?,
                "avg_frames" => c.avg_frames = val(line, &k, &v)?,
                "confusability" => c.confusability = val(line, &k, &v)?,
                "alternatives" => c.alternatives = val(line, &k, &v)?,
                "noise" => c.noise = val(line, &k, &v)?,
                "pair_separation" => c.pair_separation = val(line, &k, &v)?,
                _ => return Err(unknown(line, &k)),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&read(path.as_ref())?)
    }

    pub fn to_text(&self) -> String {
        format!(
            "seed = {}\ntrain_utts = {}\nvalid_utts = {}\nphones = {}\nstates_per_phone = {}\n\
             input_dim = {}\navg_frames = {}\nconfusability = {}\nalternatives = {}\nnoise = {}\n\
             pair_separation = {}\n",
            self.seed,
            self.train_utts,
            self.valid_utts,
            self.phones,
            self.states_per_phone,
            self.input_dim,
            self.avg_frames,
            self.confusability,
            self.alternatives,
            self.noise,
            self.pair_separation
        )
    }
}
