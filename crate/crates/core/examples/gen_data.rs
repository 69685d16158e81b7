//! Generates the synthetic confusable-phone task and prints a summary.
//!
//! cargo run --release --example gen_data -- [out-dir]

use nghf::experiment::gen_data;
use nghf::synth::GenConfig;

fn main() -> nghf::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "data".into());
    let cfg = GenConfig::default();
    let ds = gen_data(&cfg, out.as_ref())?;

    let frames: usize = ds.train.iter().map(|u| u.num_frames()).sum();
    let arcs: usize = ds.train.iter().map(|u| u.lattices.den.arcs().len()).sum();
    println!(
        "wrote {out}: {} train / {} valid utterances",
        ds.train.len(),
        ds.valid.len()
    );
    println!(
        "{} states, {} input dims",
        ds.info.num_states, ds.info.input_dim
    );
    println!(
        "avg {:.1} frames and {:.1} denominator arcs per training utterance",
        frames as f64 / ds.train.len() as f64,
        arcs as f64 / ds.train.len() as f64
    );
    Ok(())
}
