//! Share-count preconditioning on the quadratic of an unfolded model whose
//! recurrent weights are used 20 times per utterance.

use nghf::bench::{
    dense_cg, grouped_counts, iterations_to_fraction, optimal_quad_value, shared_quadratic,
};
use nghf::cg::CgConfig;

fn main() -> nghf::Result<()> {
    let counts = grouped_counts(&[20, 1], 16);
    let (a, b) = shared_quadratic(counts.as_slice(), 7);
    let q_opt = optimal_quad_value(&a, &b)?;
    for precondition in [false, true] {
        let cfg = CgConfig {
            max_iters: counts.len(),
            stabilize: false,
            precondition,
            ..CgConfig::default()
        };
        let out = dense_cg(&a, &b, &counts, &cfg)?;
        let curve: Vec<String> = out
            .candidates
            .iter()
            .take(6)
            .map(|c| format!("{:.3}", c.quad_value / q_opt))
            .collect();
        println!(
            "precondition={precondition:<5}  90% of optimum at iteration {:?}; reduction by iteration: {}",
            iterations_to_fraction(&out, q_opt, 0.9),
            curve.join(" ")
        );
    }
    Ok(())
}
