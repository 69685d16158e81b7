//! Low-precision curvature products with and without rescaling the direction
//! to the norm of the parameters, measured against an f64 oracle.

use nghf::bench::{stability_trial, BenchTask};
use nghf::distrib::WorkerPool;
use nghf::loss::LossKind;
use nghf::Precision;

fn main() -> nghf::Result<()> {
    let task = BenchTask::new("rnn:tanh:12:6;fc:identity:8", LossKind::Mpe, 3)?;
    let pool = WorkerPool::new(4)?;
    println!("ratio    trials  stabilised<=raw  median raw err  median stab err");
    for ratio in [1.0, 1e2, 1e4, 1e6] {
        let mut raw = Vec::new();
        let mut stab = Vec::new();
        let mut wins = 0;
        for seed in 0..40 {
            let t = stability_trial(&task, Precision::F32, ratio, seed, &pool)?;
            wins += usize::from(t.stab_err <= t.raw_err);
            raw.push(t.raw_err);
            stab.push(t.stab_err);
        }
        println!(
            "{ratio:<8.0e} {:>6}  {wins:>15}  {:>14.3e}  {:>15.3e}",
            raw.len(),
            median(raw),
            median(stab)
        );
    }
    Ok(())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}
