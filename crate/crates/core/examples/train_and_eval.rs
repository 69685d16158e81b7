//! The file-based workflow: generate a dataset, train from a key = value
//! config, then evaluate the best checkpoint.

use nghf::config::RunConfig;
use nghf::experiment::{eval, gen_data, train};
use nghf::synth::GenConfig;

fn main() -> nghf::Result<()> {
    let root = std::env::temp_dir().join("nghf-train-and-eval");
    let data = root.join("data");
    gen_data(
        &GenConfig {
            train_utts: 40,
            valid_utts: 10,
            ..GenConfig::default()
        },
        &data,
    )?;

    let cfg = RunConfig::from_text(&format!(
        "data = {}\nout = {}\nlayers = rnn:tanh:16:4;fc:identity:24\nloss = mpe\noptimizer = nghf\n\
         epochs = 2\nupdates_per_epoch = 4\ncg_batch = 8\ncg_iters = 6\nworkers = 4\n",
        data.display(),
        root.join("run").display()
    ))?;
    let summary = train(&cfg)?;
    for (epoch, m) in summary.valid.iter().enumerate() {
        println!("epoch {epoch}: valid MPE accuracy {:.4}", m.mpe_accuracy);
    }
    println!(
        "best epoch {}; outputs in {}",
        summary.best_epoch,
        cfg.out.display()
    );

    let rec = eval(
        &cfg.out.join("best.ckpt"),
        &data,
        "valid",
        cfg.loss,
        cfg.kappa,
        cfg.priors,
        None,
        4,
    )?;
    println!("{rec:?}");
    Ok(())
}
