//! CG micro-benchmarks: exact termination on constructed SPD spectra,
//! share-count preconditioning, limited-precision stabilisation against an
//! f64 oracle, and the drift of damped CG toward the gradient direction.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cg::{cg_run, stabilized_product, CgConfig, CgOutcome};
use crate::config::{parse_kv, read, unknown, val, PriorPolicy};
use crate::data::{Dataset, Utterance};
use crate::distrib::WorkerPool;
use crate::error::{check_dim, Error, Result};
use crate::experiment::loss_config;
use crate::loss::{LossConfig, LossKind};
use crate::model::{share_counts, ModelSpec, ShareCounts};
use crate::optim::{accumulate_gradient, CurvatureBatch, CurvatureKind};
use crate::param::{dot, norm, rel_err, ParamVector, Precision};
use crate::synth::{generate, GenConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    All,
    Spd,
    Precond,
    Stabilize,
    Damping,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Suite::All,
            "spd" => Suite::Spd,
            "precond" => Suite::Precond,
            "stabilize" => Suite::Stabilize,
            "damping" => Suite::Damping,
            _ => return Err(Error::Config(format!("unknown bench suite `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub suite: Suite,
    pub seed: u64,
    pub dim: usize,
    /// Distinct eigenvalue counts of the SPD suite.
    pub distinct: Vec<usize>,
    pub spd_trials: usize,
    /// Per-group share counts of the preconditioning system; each group
    /// holds `group_size` parameters.
    pub shared_counts: Vec<u64>,
    pub group_size: usize,
    pub layers: String,
    pub loss: LossKind,
    pub cg_iters: usize,
    /// `‖θ‖/‖v‖` imposed in the stabilisation suite.
    pub scale_ratio: f64,
    pub stab_trials: usize,
    pub precision: Precision,
    pub dampings: Vec<f64>,
    pub workers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            suite: Suite::All,
            seed: 11,
            dim: 32,
            distinct: vec![2, 3, 5],
            spd_trials: 3,
            shared_counts: vec![20, 1],
            group_size: 8,
            layers: "rnn:tanh:12:4;fc:identity:8".into(),
            loss: LossKind::Ce,
            cg_iters: 8,
            scale_ratio: 1e5,
            stab_trials: 10,
            precision: Precision::F32,
            dampings: vec![0.0, 0.1, 1.0, 10.0, 100.0, 1e4],
            workers: 1,
        }
    }
}

fn list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|s| val(line, key, s.trim())).collect()
}

impl BenchConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (line, k, v) in parse_kv(text)? {
            match k.as_str() {
                "suite" => c.suite = val(line, &k, &v)?,
                "seed" => c.seed = val(line, &k, &v)?,
                "dim" => c.dim = val(line, &k, &v)?,
                "distinct" => c.distinct = list(line, &k, &v)?,
                "spd_trials" => c.spd_trials = val(line, &k, &v)?,
                "shared_counts" => c.shared_counts = list(line, &k, &v)?,
                "group_size" => c.group_size = val(line, &k, &v)?,
                "layers" => c.layers = v.clone(),
                "loss" => c.loss = val(line, &k, &v)?,
                "cg_iters" => c.cg_iters = val(line, &k, &v)?,
                "scale_ratio" => c.scale_ratio = val(line, &k, &v)?,
                "stab_trials" => c.stab_trials = val(line, &k, &v)?,
                "precision" => c.precision = val(line, &k, &v)?,
                "dampings" => c.dampings = list(line, &k, &v)?,
                "workers" => c.workers = val(line, &k, &v)?,
                _ => return Err(unknown(line, &k)),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_text(&read(path.as_ref())?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > 64 {
            return Err(Error::Config(format!(
                "bench dim must be in 1..=64, got {}",
                self.dim
            )));
        }
        if let Some(k) = self.distinct.iter().find(|&&k| k == 0 || k > self.dim) {
            return Err(Error::Config(format!(
                "distinct eigenvalue count {k} out of range"
            )));
        }
        if self.shared_counts.is_empty() || self.shared_counts.contains(&0) || self.group_size == 0
        {
            return Err(Error::Config("share counts must be positive".into()));
        }
        if self.cg_iters == 0 || !(self.scale_ratio > 0.0) || self.workers == 0 {
            return Err(Error::Config(
                "cg_iters, scale_ratio and workers must be positive".into(),
            ));
        }
        if self.dampings.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Config("dampings must be >= 0".into()));
        }
        Ok(())
    }
}

/// One CSV row: a CG iteration of one benchmark case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub suite: String,
    pub case: String,
    pub trial: usize,
    pub iteration: usize,
    pub residual_norm: f64,
    pub quad_value: f64,
    /// Relative L2 distance of the iterate to the oracle solution or oracle run.
    pub oracle_err: Option<f64>,
    pub cosine_to_neg_grad: Option<f64>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_vec(n, n, gaussian_vec(rng, n * n));
    g.qr().q()
}

/// SPD matrix `Q diag(λ) Qᵀ` whose spectrum cycles through `eigenvalues`,
/// with a Gaussian right-hand side.
pub fn spd_system(dim: usize, eigenvalues: &[f64], seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_orthogonal(dim, &mut rng);
    let lam = DVector::from_iterator(dim, (0..dim).map(|i| eigenvalues[i % eigenvalues.len()]));
    let a = &q * DMatrix::from_diagonal(&lam) * q.transpose();
    let a = (&a + a.transpose()) * 0.5;
    (a, gaussian_vec(&mut rng, dim))
}

/// `k` well-separated eigenvalues in `[1, 10]`.
pub fn distinct_eigenvalues(k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| 1.0 + 9.0 * i as f64 / (k.max(2) - 1) as f64)
        .collect()
}

/// Toy quadratic of an unfolded model: a well-conditioned core `A` seen
/// through the share counts, `B = D^½ A D^½` and `b = D^½ a`, where a
/// parameter used `c` times accumulates `c`-fold curvature and gradient
/// energy.
pub fn shared_quadratic(counts: &[u64], seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let n = counts.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_orthogonal(n, &mut rng);
    let lam = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(1.0..4.0)));
    let a = &q * DMatrix::from_diagonal(&lam) * q.transpose();
    let d = DVector::from_iterator(n, counts.iter().map(|&c| (c as f64).sqrt()));
    let dm = DMatrix::from_diagonal(&d);
    let b_mat = &dm * a * &dm;
    let b_mat = (&b_mat + b_mat.transpose()) * 0.5;
    let rhs = gaussian_vec(&mut rng, n)
        .iter()
        .zip(d.iter())
        .map(|(x, s)| x * s)
        .collect();
    (b_mat, rhs)
}

/// Expands per-group counts to per-parameter counts.
pub fn grouped_counts(groups: &[u64], group_size: usize) -> ShareCounts {
    ShareCounts::new(
        groups
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, group_size))
            .collect(),
    )
}

pub fn dense_solve(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::Config("matrix is not SPD".into()))?;
    Ok(chol
        .solve(&DVector::from_column_slice(b))
        .iter()
        .copied()
        .collect())
}

/// Minimum of `-bᵀx + ½xᵀAx`.
pub fn optimal_quad_value(a: &DMatrix<f64>, b: &[f64]) -> Result<f64> {
    Ok(-0.5 * dot(b, &dense_solve(a, b)?))
}

pub fn dense_cg(
    a: &DMatrix<f64>,
    b: &[f64],
    counts: &ShareCounts,
    cfg: &CgConfig,
) -> Result<CgOutcome> {
    check_dim("dense system", a.nrows(), b.len())?;
    let theta = vec![0.0; b.len()];
    cg_run(
        b,
        &theta,
        |v| {
            Ok((a * DVector::from_column_slice(v))
                .iter()
                .copied()
                .collect())
        },
        counts,
        cfg,
    )
}

/// First 1-based iteration whose quadratic value reaches `fraction` of the
/// optimal reduction.
pub fn iterations_to_fraction(out: &CgOutcome, q_opt: f64, fraction: f64) -> Option<usize> {
    out.candidates
        .iter()
        .find(|c| c.quad_value <= fraction * q_opt)
        .map(|c| c.iteration)
}

/// A small real model on a synthetic task, with its CG batch.
#[derive(Debug, Clone)]
pub struct BenchTask {
    pub model: ModelSpec,
    pub params: ParamVector,
    pub loss: LossConfig,
    pub data: Dataset,
}

impl BenchTask {
    pub fn new(layers: &str, loss: LossKind, seed: u64) -> Result<Self> {
        let gen = GenConfig {
            seed,
            train_utts: 6,
            valid_utts: 0,
            phones: 4,
            states_per_phone: 2,
            input_dim: 6,
            avg_frames: 16,
            ..GenConfig::default()
        };
        let data = generate(&gen)?;
        let model = ModelSpec::parse_layers(gen.input_dim, layers)?;
        if model.output_dim != data.info.num_states {
            return Err(Error::InvalidModel(format!(
                "bench model needs {} outputs, got {}",
                data.info.num_states, model.output_dim
            )));
        }
        let params = model.init_params(seed, Precision::F64);
        let loss = loss_config(loss, 1.0, PriorPolicy::Estimated, &data.info)?;
        Ok(Self {
            model,
            params,
            loss,
            data,
        })
    }

    pub fn batch(&self) -> Vec<&Utterance> {
        self.data.train.iter().collect()
    }

    pub fn at(&self, precision: Precision) -> ParamVector {
        ParamVector::new(self.params.values.clone(), precision)
    }
}

/// Raw and stabilised low-precision Gauss-Newton products against the f64
/// oracle for one random direction with `‖θ‖/‖v‖ = ratio`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityTrial {
    pub raw_err: f64,
    pub stab_err: f64,
    pub raw_vbv: f64,
    pub stab_vbv: f64,
    pub oracle_vbv: f64,
}

pub fn stability_trial(
    task: &BenchTask,
    precision: Precision,
    ratio: f64,
    seed: u64,
    pool: &WorkerPool,
) -> Result<StabilityTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = gaussian_vec(&mut rng, task.params.len());
    let s = norm(task.params.as_slice()) / ratio / norm(&v);
    v.iter_mut().for_each(|x| *x *= s);
    let batch = task.batch();
    let hi = task.at(Precision::F64);
    let lo = task.at(precision);
    let oracle_b = CurvatureBatch::build(&task.model, &hi, &batch, &task.loss, pool)?;
    let low_b = CurvatureBatch::build(&task.model, &lo, &batch, &task.loss, pool)?;
    let gn = |b: &CurvatureBatch<'_>, v: &[f64]| {
        b.product(CurvatureKind::GaussNewton, 1.0, v, pool)
            .map(|p| p.0)
    };
    let oracle = gn(&oracle_b, &v)?;
    let raw = gn(&low_b, &v)?;
    let stab = stabilized_product(|x| gn(&low_b, x), &v, lo.as_slice())?;
    Ok(StabilityTrial {
        raw_err: rel_err(&raw, &oracle),
        stab_err: rel_err(&stab, &oracle),
        raw_vbv: dot(&v, &raw),
        stab_vbv: dot(&v, &stab),
        oracle_vbv: dot(&v, &oracle),
    })
}

fn trace_rows(
    suite: &str,
    case: &str,
    trial: usize,
    out: &CgOutcome,
    extra: impl Fn(usize, &[f64]) -> (Option<f64>, Option<f64>),
) -> Vec<BenchRow> {
    out.trace
        .iter()
        .zip(&out.candidates)
        .enumerate()
        .map(|(i, (t, c))| {
            let (oracle_err, cosine_to_neg_grad) = extra(i, &c.delta);
            BenchRow {
                suite: suite.into(),
                case: case.into(),
                trial,
                iteration: t.iteration,
                residual_norm: t.residual_norm,
                quad_value: t.quad_value,
                oracle_err,
                cosine_to_neg_grad,
            }
        })
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

fn spd_suite(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    let ccfg = CgConfig {
        max_iters: cfg.dim,
        stabilize: false,
        precondition: false,
        ..CgConfig::default()
    };
    for &k in &cfg.distinct {
        for trial in 0..cfg.spd_trials {
            let (a, b) = spd_system(cfg.dim, &distinct_eigenvalues(k), cfg.seed + trial as u64);
            let exact = dense_solve(&a, &b)?;
            let out = dense_cg(&a, &b, &ShareCounts::ones(cfg.dim), &ccfg)?;
            rows.extend(trace_rows("spd", &format!("k={k}"), trial, &out, |_, d| {
                (Some(rel_err(d, &exact)), None)
            }));
        }
    }
    Ok(rows)
}

fn precond_suite(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let counts = grouped_counts(&cfg.shared_counts, cfg.group_size);
    let (a, b) = shared_quadratic(counts.as_slice(), cfg.seed);
    let exact = dense_solve(&a, &b)?;
    let mut rows = Vec::new();
    for on in [false, true] {
        let ccfg = CgConfig {
            max_iters: counts.len(),
            stabilize: false,
            precondition: on,
            ..CgConfig::default()
        };
        let out = dense_cg(&a, &b, &counts, &ccfg)?;
        let case = if on {
            "precondition=on"
        } else {
            "precondition=off"
        };
        rows.extend(trace_rows("precond", case, 0, &out, |_, d| {
            (Some(rel_err(d, &exact)), None)
        }));
    }
    Ok(rows)
}

fn neg_gradient(task: &BenchTask, params: &ParamVector, pool: &WorkerPool) -> Result<Vec<f64>> {
    let g = accumulate_gradient(&task.model, params, &task.batch(), &task.loss, pool)?;
    Ok(g.raw.iter().map(|x| -x).collect())
}

fn stabilize_suite(cfg: &BenchConfig, pool: &WorkerPool) -> Result<Vec<BenchRow>> {
    let task = BenchTask::new(&cfg.layers, cfg.loss, cfg.seed)?;
    let counts = share_counts(&task.model);
    let hi = task.at(Precision::F64);
    let lo = task.at(cfg.precision);
    let mut b = neg_gradient(&task, &hi, pool)?;
    let s = norm(hi.as_slice()) / cfg.scale_ratio / norm(&b);
    b.iter_mut().for_each(|x| *x *= s);
    let batch = task.batch();
    let hi_b = CurvatureBatch::build(&task.model, &hi, &batch, &task.loss, pool)?;
    let lo_b = CurvatureBatch::build(&task.model, &lo, &batch, &task.loss, pool)?;
    let run = |curv: &CurvatureBatch<'_>, stabilize: bool| {
        let ccfg = CgConfig {
            max_iters: cfg.cg_iters,
            stabilize,
            precondition: false,
            ..CgConfig::default()
        };
        cg_run(
            &b,
            hi.as_slice(),
            |v| {
                curv.product(CurvatureKind::GaussNewton, 1.0, v, pool)
                    .map(|p| p.0)
            },
            &counts,
            &ccfg,
        )
    };
    let oracle = run(&hi_b, false)?;
    let mut rows = Vec::new();
    for stabilize in [false, true] {
        let out = run(&lo_b, stabilize)?;
        let case = format!(
            "{}:stabilize={}",
            cfg.precision,
            if stabilize { "on" } else { "off" }
        );
        rows.extend(trace_rows("stabilize", &case, 0, &out, |i, d| {
            (oracle.candidates.get(i).map(|o| rel_err(d, &o.delta)), None)
        }));
    }
    Ok(rows)
}

fn damping_suite(cfg: &BenchConfig, pool: &WorkerPool) -> Result<Vec<BenchRow>> {
    let task = BenchTask::new(&cfg.layers, cfg.loss, cfg.seed)?;
    let counts = share_counts(&task.model);
    let b = neg_gradient(&task, &task.params, pool)?;
    let curv = CurvatureBatch::build(&task.model, &task.params, &task.batch(), &task.loss, pool)?;
    let mut rows = Vec::new();
    for &eta in &cfg.dampings {
        let ccfg = CgConfig {
            max_iters: cfg.cg_iters,
            damping: eta,
            precondition: false,
            ..CgConfig::default()
        };
        let out = cg_run(
            &b,
            task.params.as_slice(),
            |v| {
                curv.product(CurvatureKind::GaussNewton, 1.0, v, pool)
                    .map(|p| p.0)
            },
            &counts,
            &ccfg,
        )?;
        rows.extend(trace_rows(
            "damping",
            &format!("eta={eta}"),
            0,
            &out,
            |_, d| (None, Some(cosine(d, &b))),
        ));
    }
    Ok(rows)
}

/// Runs the selected suites.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let pool = WorkerPool::new(cfg.workers)?;
    let all = cfg.suite == Suite::All;
    let mut rows = Vec::new();
    if all || cfg.suite == Suite::Spd {
        rows.extend(spd_suite(cfg)?);
    }
    if all || cfg.suite == Suite::Precond {
        rows.extend(precond_suite(cfg)?);
    }
    if all || cfg.suite == Suite::Stabilize {
        rows.extend(stabilize_suite(cfg, &pool)?);
    }
    if all || cfg.suite == Suite::Damping {
        rows.extend(damping_suite(cfg, &pool)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_quadratic_is_spd_with_scaled_rhs() {
        let counts = grouped_counts(&[20, 1], 3);
        let (a, b) = shared_quadratic(counts.as_slice(), 3);
        assert!(a.clone().cholesky().is_some());
        assert_eq!(b.len(), 6);
    }

    #[test]
    fn config_rejects_unknown_key() {
        assert!(BenchConfig::from_text("suite = spd\nbogus = 1\n").is_err());
        let c = BenchConfig::from_text("suite = precond\ndistinct = 2, 4\n").unwrap();
        assert_eq!(c.distinct, vec![2, 4]);
    }
}
