//! End-to-end runs behind the command-line front-end: data generation,
//! training with per-epoch checkpoints, evaluation and lattice inspection.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{PriorPolicy, RunConfig};
use crate::data::{Dataset, TaskInfo};
use crate::error::{Error, Result};
use crate::lattice::{forward_backward, parse_lattices, Lattice};
use crate::loss::{LossConfig, LossKind};
use crate::model::{read_checkpoint, write_checkpoint, Checkpoint, ModelSpec};
use crate::optim::metrics::{trace_rows, write_csv, MetricsRow, StageRow};
use crate::optim::{SetMetrics, Trainer, UpdateReport};
use crate::param::{ParamVector, Precision};
use crate::synth::{generate, GenConfig};

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Generates a synthetic dataset into `out` together with its resolved
/// generator config.
pub fn gen_data(cfg: &GenConfig, out: &Path) -> Result<Dataset> {
    let ds = generate(cfg)?;
    ds.write(out)?;
    fs::write(out.join("gen.conf"), cfg.to_text()).map_err(io(out))?;
    Ok(ds)
}

pub fn loss_config(
    kind: LossKind,
    kappa: f64,
    priors: PriorPolicy,
    info: &TaskInfo,
) -> Result<LossConfig> {
    match priors {
        PriorPolicy::Uniform => LossConfig::uniform(kind, kappa, info.num_states),
        PriorPolicy::Estimated => LossConfig::estimated(kind, kappa, &info.state_counts),
    }
}

/// Model and initial parameters of a run: the `init` checkpoint when set,
/// otherwise a seeded random initialisation.
pub fn initial_model(cfg: &RunConfig, info: &TaskInfo) -> Result<(ModelSpec, ParamVector)> {
    let (model, mut params) = match &cfg.init {
        Some(path) => {
            let ck = read_checkpoint(path)?;
            (ck.model, ck.params)
        }
        None => {
            let model = ModelSpec::parse_layers(info.input_dim, &cfg.layers)?;
            let params = model.init_params(cfg.seed, cfg.precision);
            (model, params)
        }
    };
    if model.input_dim != info.input_dim || model.output_dim != info.num_states {
        return Err(Error::InvalidModel(format!(
            "model maps {} -> {} but the task has {} features and {} states",
            model.input_dim, model.output_dim, info.input_dim, info.num_states
        )));
    }
    params.precision = cfg.precision;
    Ok((model, params))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub reports: Vec<UpdateReport>,
    /// Validation metrics before training and after every epoch.
    pub valid: Vec<SetMetrics>,
    pub best_epoch: usize,
    pub params: ParamVector,
}

/// Runs `cfg.epochs` epochs. Writes into `cfg.out`: `config.txt`,
/// `metrics.csv`, `stages.csv`, `cg_trace.csv`, `epoch-<n>.ckpt` and
/// `best.ckpt` (best validation MPE accuracy; epoch 0 is the start point).
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let ds = Dataset::read(&cfg.data)?;
    let (model, params) = initial_model(cfg, &ds.info)?;
    let loss = loss_config(cfg.loss, cfg.kappa, cfg.priors, &ds.info)?;
    let out = cfg.out.as_path();
    fs::create_dir_all(out).map_err(io(out))?;
    fs::write(out.join("config.txt"), cfg.to_text()).map_err(io(out))?;

    let mut trainer = Trainer::new(
        model.clone(),
        params,
        cfg.optim.clone(),
        loss,
        cfg.workers,
        cfg.seed,
    )?;
    let has_valid = !ds.valid.is_empty();
    let mut valid = Vec::new();
    let mut best = (0usize, f64::NEG_INFINITY);
    if has_valid {
        let m = trainer.evaluate(&ds.valid)?;
        best = (0, m.mpe_accuracy);
        valid.push(m);
    }
    let ckpt = |params: &ParamVector| Checkpoint {
        model: model.clone(),
        params: params.clone(),
    };
    write_checkpoint(out.join("best.ckpt"), &ckpt(&trainer.params))?;

    let mut reports: Vec<UpdateReport> = Vec::new();
    let mut rows = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut epoch_reports = trainer.run_epoch(&ds.train, has_valid.then_some(&ds.valid[..]))?;
        if !trainer.params.is_finite() {
            return Err(Error::NonFinite(
                "parameters after epoch; last good checkpoint kept",
            ));
        }
        write_checkpoint(
            out.join(format!("epoch-{epoch}.ckpt")),
            &ckpt(&trainer.params),
        )?;
        let metric = if has_valid {
            let m = trainer.evaluate(&ds.valid)?;
            if m.mpe_accuracy > best.1 {
                best = (epoch, m.mpe_accuracy);
                write_checkpoint(out.join("best.ckpt"), &ckpt(&trainer.params))?;
            }
            valid.push(m);
            Some(m.mpe_accuracy)
        } else {
            None
        };
        let last = epoch_reports.len().saturating_sub(1);
        for (i, r) in epoch_reports.iter().enumerate() {
            rows.push(MetricsRow::from_report(
                r,
                if i == last { metric } else { None },
            ));
        }
        reports.append(&mut epoch_reports);
        write_run_csvs(out, &rows, &reports)?;
    }
    fs::write(out.join("best.txt"), format!("{}\n", best.0)).map_err(io(out))?;
    Ok(TrainSummary {
        reports,
        valid,
        best_epoch: best.0,
        params: trainer.params,
    })
}

fn write_run_csvs(out: &Path, rows: &[MetricsRow], reports: &[UpdateReport]) -> Result<()> {
    write_csv(out.join("metrics.csv"), rows)?;
    let stages: Vec<StageRow> = reports
        .iter()
        .filter(|r| r.optimizer.uses_cg())
        .map(StageRow::from_report)
        .collect();
    write_csv(out.join("stages.csv"), &stages)?;
    let traces: Vec<_> = reports.iter().flat_map(trace_rows).collect();
    write_csv(out.join("cg_trace.csv"), &traces)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub checkpoint: String,
    pub split: String,
    pub loss: String,
    pub value: f64,
    pub mpe_accuracy: f64,
    pub frame_error: f64,
    pub utterances: usize,
}

/// Evaluates a checkpoint on one split of a dataset.
pub fn eval(
    checkpoint: &Path,
    data: &Path,
    split: &str,
    loss: LossKind,
    kappa: f64,
    priors: PriorPolicy,
    precision: Option<Precision>,
    workers: usize,
) -> Result<EvalRecord> {
    let ck = read_checkpoint(checkpoint)?;
    let ds = Dataset::read(data)?;
    let utts = ds.split(split)?;
    if utts.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let mut params = ck.params;
    if let Some(p) = precision {
        params.precision = p;
    }
    let lc = loss_config(loss, kappa, priors, &ds.info)?;
    let pool = crate::distrib::WorkerPool::new(workers)?;
    let refs: Vec<_> = utts.iter().collect();
    let m = crate::optim::evaluate_set(&ck.model, &params, &refs, &lc, &pool)?;
    Ok(EvalRecord {
        checkpoint: checkpoint.display().to_string(),
        split: split.to_string(),
        loss: loss.to_string(),
        value: m.loss,
        mpe_accuracy: m.mpe_accuracy,
        frame_error: m.frame_error,
        utterances: m.utterances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSummary {
    pub utt_id: String,
    pub nodes: usize,
    pub arcs: usize,
    pub frames: usize,
    /// Number of complete paths (as f64; exact below 2^53).
    pub paths: f64,
    /// Largest deviation of a per-frame occupancy sum from 1 under flat
    /// arc scores.
    pub max_occupancy_error: f64,
}

/// Parses and validates every lattice in a file.
pub fn lattice_check(path: &Path) -> Result<Vec<LatticeSummary>> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    parse_lattices(&text)?
        .iter()
        .map(summarize_lattice)
        .collect()
}

pub fn summarize_lattice(lat: &Lattice) -> Result<LatticeSummary> {
    let fb = forward_backward(lat, &vec![0.0; lat.arcs().len()])?;
    let mut per_frame = vec![0.0; lat.num_frames()];
    for (q, g) in fb.gamma.iter().enumerate() {
        for f in &mut per_frame[lat.arc_start_frame(q)..lat.arc_end_frame(q)] {
            *f += g;
        }
    }
    Ok(LatticeSummary {
        utt_id: lat.utt_id.clone(),
        nodes: lat.nodes().len(),
        arcs: lat.arcs().len(),
        frames: lat.num_frames(),
        paths: fb.log_z.exp().round(),
        max_occupancy_error: per_frame
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max),
    })
}

/// `<dir>/<name>`, creating `dir`.
pub fn output_path(dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    Ok(dir.join(name))
}
