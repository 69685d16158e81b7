//! Compares the back-propagated MPE gradient of a small LSTM with central
//! differences of the loss.

use nghf::bench::BenchTask;
use nghf::distrib::WorkerPool;
use nghf::loss::LossKind;
use nghf::model::forward;
use nghf::optim::accumulate_gradient;
use nghf::optim::objective::utterance_loss;
use nghf::param::norm;

fn main() -> nghf::Result<()> {
    let task = BenchTask::new("lstm:6:4;fc:identity:8", LossKind::Mpe, 5)?;
    let batch = task.batch();
    let pool = WorkerPool::new(2)?;
    let g = accumulate_gradient(&task.model, &task.params, &batch, &task.loss, &pool)?;

    let loss_at = |values: Vec<f64>| -> nghf::Result<f64> {
        let p = task.params.with_values(values);
        let mut total = 0.0;
        for u in &batch {
            total += utterance_loss(
                u,
                &forward(&task.model, &p, &u.features)?.logits(),
                &task.loss,
            )?;
        }
        Ok(total / batch.len() as f64)
    };
    let eps = 1e-5;
    let mut fd = vec![0.0; task.params.len()];
    for i in 0..fd.len() {
        let mut plus = task.params.values.clone();
        let mut minus = task.params.values.clone();
        plus[i] += eps;
        minus[i] -= eps;
        fd[i] = (loss_at(plus)? - loss_at(minus)?) / (2.0 * eps);
    }
    let diff: Vec<f64> = g.raw.iter().zip(&fd).map(|(a, b)| a - b).collect();
    println!("{} parameters, loss {:.6}", task.params.len(), g.loss);
    println!(
        "|grad| = {:.6e}, rel. L2 error vs central differences = {:.3e}",
        norm(&g.raw),
        norm(&diff) / norm(&fd)
    );
    Ok(())
}
