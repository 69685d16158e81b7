//! Cross-entropy pretraining with SGD followed by MPE sequence training with
//! NGHF, printing what every second-order update did. An update whose CG
//! candidates all raise the CG-batch loss is rejected and shows "none".

use nghf::config::PriorPolicy;
use nghf::experiment::loss_config;
use nghf::loss::LossKind;
use nghf::model::ModelSpec;
use nghf::optim::{OptimizerConfig, OptimizerKind, Trainer};
use nghf::synth::{generate, GenConfig};
use nghf::Precision;

fn main() -> nghf::Result<()> {
    let ds = generate(&GenConfig {
        train_utts: 80,
        valid_utts: 20,
        ..GenConfig::default()
    })?;
    let n = ds.info.num_states;
    let model =
        ModelSpec::parse_layers(ds.info.input_dim, &format!("rnn:tanh:24:6;fc:identity:{n}"))?;
    let params = model.init_params(1, Precision::F64);

    let sgd = OptimizerConfig {
        kind: OptimizerKind::Sgd,
        learning_rate: 0.003,
        gradient_batch_size: 4,
        ..OptimizerConfig::default()
    };
    let ce = loss_config(LossKind::Ce, 1.0, PriorPolicy::Estimated, &ds.info)?;
    let mut t = Trainer::new(model, params, sgd, ce, 4, 1)?;
    for _ in 0..3 {
        t.run_epoch(&ds.train, None)?;
    }
    println!(
        "after CE pretraining: valid MPE accuracy {:.4}",
        t.evaluate(&ds.valid)?.mpe_accuracy
    );

    // Defaults: 8 updates per epoch, CG batches of 20, 8 CG and 4 inner
    // Fisher iterations.
    t.cfg = OptimizerConfig::default();
    t.loss = loss_config(LossKind::Mpe, 1.0, PriorPolicy::Estimated, &ds.info)?;
    println!("update  train loss  cg batch before -> after  chosen  stop");
    for _ in 0..2 {
        for r in t.run_epoch(&ds.train, None)? {
            println!(
                "{:>6}  {:>10.4}  {:>15.4} -> {:<8.4}  {:>6}  {:?}",
                r.update,
                r.train_loss,
                r.cg_batch_loss_before.unwrap_or(f64::NAN),
                r.cg_batch_loss.unwrap_or(f64::NAN),
                if r.failed {
                    "none".to_string()
                } else {
                    r.chosen_m.to_string()
                },
                r.cg_stop.unwrap()
            );
        }
        let m = t.evaluate(&ds.valid)?;
        println!(
            "valid: MPE loss {:.4}, MPE accuracy {:.4}, frame error {:.4}",
            m.loss, m.mpe_accuracy, m.frame_error
        );
    }
    Ok(())
}
