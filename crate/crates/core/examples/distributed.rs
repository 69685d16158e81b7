//! Gradients, curvature products and whole training runs reduce in a fixed
//! key order, so the result does not depend on the number of workers.

use nghf::loss::{LossConfig, LossKind};
use nghf::model::ModelSpec;
use nghf::optim::{OptimizerConfig, Trainer};
use nghf::synth::{generate, GenConfig};
use nghf::Precision;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

fn main() -> nghf::Result<()> {
    let ds = generate(&GenConfig {
        train_utts: 48,
        valid_utts: 8,
        ..GenConfig::default()
    })?;
    let n = ds.info.num_states;
    let model = ModelSpec::parse_layers(ds.info.input_dim, &format!("lstm:16:6;fc:identity:{n}"))?;
    let params = model.init_params(4, Precision::F64);
    let cfg = OptimizerConfig {
        cg_batch_size: 12,
        updates_per_epoch: 4,
        ..OptimizerConfig::default()
    };
    for workers in [1, 2, 4, 8] {
        let mut t = Trainer::new(
            model.clone(),
            params.clone(),
            cfg.clone(),
            LossConfig::uniform(LossKind::Mmi, 0.8, n)?,
            workers,
            5,
        )?;
        let clock = Instant::now();
        t.run_epoch(&ds.train, None)?;
        let mut h = DefaultHasher::new();
        t.params
            .as_slice()
            .iter()
            .for_each(|x| x.to_bits().hash(&mut h));
        println!(
            "workers {workers}: parameter hash {:016x}  ({:.0} ms)",
            h.finish(),
            clock.elapsed().as_secs_f64() * 1e3
        );
    }
    Ok(())
}
