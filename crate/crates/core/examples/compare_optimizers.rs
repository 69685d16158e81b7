//! One epoch of each optimiser on the MPE criterion from the same
//! cross-entropy starting point.

use nghf::config::PriorPolicy;
use nghf::experiment::loss_config;
use nghf::loss::LossKind;
use nghf::model::ModelSpec;
use nghf::optim::{OptimizerConfig, OptimizerKind, Trainer};
use nghf::synth::{generate, GenConfig};
use nghf::Precision;
use std::time::Instant;

fn main() -> nghf::Result<()> {
    let ds = generate(&GenConfig {
        train_utts: 80,
        valid_utts: 20,
        ..GenConfig::default()
    })?;
    let n = ds.info.num_states;
    let model =
        ModelSpec::parse_layers(ds.info.input_dim, &format!("rnn:tanh:24:6;fc:identity:{n}"))?;
    let sgd = OptimizerConfig {
        kind: OptimizerKind::Sgd,
        learning_rate: 0.003,
        gradient_batch_size: 4,
        ..OptimizerConfig::default()
    };
    let ce = loss_config(LossKind::Ce, 1.0, PriorPolicy::Estimated, &ds.info)?;
    let mut pre = Trainer::new(
        model.clone(),
        model.init_params(1, Precision::F64),
        sgd,
        ce,
        4,
        1,
    )?;
    for _ in 0..3 {
        pre.run_epoch(&ds.train, None)?;
    }
    let start = pre.params;

    let mpe = loss_config(LossKind::Mpe, 1.0, PriorPolicy::Estimated, &ds.info)?;
    let base = Trainer::new(
        model.clone(),
        start.clone(),
        OptimizerConfig::default(),
        mpe.clone(),
        4,
        2,
    )?
    .evaluate(&ds.valid)?;
    println!(
        "start  valid MPE loss {:.4}  accuracy {:.4}",
        base.loss, base.mpe_accuracy
    );
    for kind in [
        OptimizerKind::Sgd,
        OptimizerKind::Adam,
        OptimizerKind::Hf,
        OptimizerKind::Ng,
        OptimizerKind::Nghf,
    ] {
        let cfg = OptimizerConfig {
            kind,
            learning_rate: if kind == OptimizerKind::Adam {
                1e-3
            } else {
                3e-3
            },
            gradient_batch_size: 4,
            ..OptimizerConfig::default()
        };
        let mut t = Trainer::new(model.clone(), start.clone(), cfg, mpe.clone(), 4, 2)?;
        let clock = Instant::now();
        let reports = t.run_epoch(&ds.train, None)?;
        let m = t.evaluate(&ds.valid)?;
        println!(
            "{:<6} valid MPE loss {:.4}  accuracy {:.4}  ({} updates, {:.0} ms)",
            kind.to_string(),
            m.loss,
            m.mpe_accuracy,
            reports.len(),
            clock.elapsed().as_secs_f64() * 1e3
        );
    }
    Ok(())
}
