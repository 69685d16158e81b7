//! Preconditioned CG on a dense SPD system: the per-iteration trace, exact
//! termination after as many steps as there are distinct eigenvalues, and
//! damping.

use nghf::bench::{dense_cg, dense_solve, distinct_eigenvalues, spd_system};
use nghf::cg::CgConfig;
use nghf::model::ShareCounts;
use nghf::param::norm;

fn main() -> nghf::Result<()> {
    let dim = 40;
    let (a, b) = spd_system(dim, &distinct_eigenvalues(4), 1);
    let exact = dense_solve(&a, &b)?;
    let cfg = CgConfig {
        max_iters: 10,
        stabilize: false,
        precondition: false,
        ..CgConfig::default()
    };
    let out = dense_cg(&a, &b, &ShareCounts::ones(dim), &cfg)?;
    println!("4 distinct eigenvalues, dim {dim}: stop = {:?}", out.stop);
    println!("iter   alpha       residual     quad value   err vs solve");
    for (t, c) in out.trace.iter().zip(&out.candidates) {
        let err: Vec<f64> = c.delta.iter().zip(&exact).map(|(x, y)| x - y).collect();
        println!(
            "{:>4}  {:>9.5}  {:>11.3e}  {:>11.6}  {:.3e}",
            t.iteration,
            t.alpha,
            t.residual_norm,
            t.quad_value,
            norm(&err) / norm(&exact)
        );
    }

    for damping in [0.0, 1.0, 100.0] {
        let out = dense_cg(
            &a,
            &b,
            &ShareCounts::ones(dim),
            &CgConfig {
                damping,
                ..cfg.clone()
            },
        )?;
        let d = &out.candidates.last().unwrap().delta;
        println!("damping {damping:>5}: |delta| = {:.4}", norm(d));
    }
    Ok(())
}
