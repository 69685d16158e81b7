//! Gauss-Newton and Fisher products on a recurrent MMI model. Rayleigh
//! quotients along random directions and along the gradient show how
//! differently the two matrices scale the same direction.

use nghf::bench::BenchTask;
use nghf::distrib::WorkerPool;
use nghf::loss::LossKind;
use nghf::optim::{accumulate_gradient, CurvatureBatch, CurvatureKind};
use nghf::param::dot;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> nghf::Result<()> {
    let task = BenchTask::new("rnn:tanh:12:5;fc:identity:8", LossKind::Mmi, 2)?;
    let pool = WorkerPool::new(4)?;
    let batch = task.batch();
    let curv = CurvatureBatch::build(&task.model, &task.params, &batch, &task.loss, &pool)?;
    let grad = accumulate_gradient(&task.model, &task.params, &batch, &task.loss, &pool)?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    println!("direction      v.Gv/v.v       v.Fv/v.v");
    for trial in 0..4 {
        let v: Vec<f64> = (0..task.params.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        report(&format!("random {trial}"), &curv, &v, &pool)?;
    }
    report("gradient", &curv, &grad.raw, &pool)?;
    let (_, timing) = curv.product(CurvatureKind::GaussNewton, 1.0, &grad.raw, &pool)?;
    println!(
        "one G product: modified forward {:.2} ms, EBP {:.2} ms",
        timing.rforward_ms, timing.ebp_ms
    );
    Ok(())
}

fn report(name: &str, curv: &CurvatureBatch<'_>, v: &[f64], pool: &WorkerPool) -> nghf::Result<()> {
    let vv = dot(v, v);
    let gv = curv.product(CurvatureKind::GaussNewton, 1.0, v, pool)?.0;
    let fv = curv.product(CurvatureKind::Fisher, 1.0, v, pool)?.0;
    println!(
        "{name:<12} {:>12.4e}   {:>12.4e}",
        dot(v, &gv) / vv,
        dot(v, &fv) / vv
    );
    Ok(())
}
