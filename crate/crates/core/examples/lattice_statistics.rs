//! Forward-backward over a small hand-written lattice: arc occupancies, the
//! MPE statistics and the per-frame state occupancies.

use nghf::lattice::{
    forward_backward, log_softmax_rows, mpe_occupancy, mpe_stats, parse_lattice, serialize_lattice,
    state_occupancy, TimedPhone,
};
use nghf::FrameMatrix;

const LATTICE: &str = "\
# two competing segmentations of a four-frame utterance
LATTICE demo 4 5
N 0 0
N 1 2
N 2 3
N 3 4
A 0 1 a -0.2 0,0
A 0 1 b -1.6 1,1
A 1 3 c -0.1 2,2
A 1 2 c -0.9 2
A 2 3 a -0.4 0
";

fn main() -> nghf::Result<()> {
    let lat = parse_lattice(LATTICE)?;
    let reference = [TimedPhone::new("a", 0, 2), TimedPhone::new("c", 2, 4)];
    let logits = FrameMatrix::from_rows(&[
        vec![1.0, 0.2, -0.5],
        vec![0.8, 0.4, -0.3],
        vec![-0.2, 0.1, 1.1],
        vec![0.3, -0.4, 0.9],
    ])?;
    let priors = [-1.1, -1.1, -1.1];
    let kappa = 0.8;

    let scores = lat.total_scores(&log_softmax_rows(&logits), &priors, kappa)?;
    let fb = forward_backward(&lat, &scores)?;
    let corr = lat.arc_correctness(&reference)?;
    let st = mpe_stats(&lat, &scores, &fb, &corr)?;

    println!(
        "log Z = {:.6}, expected correctness = {:.4}",
        fb.log_z, st.c_avg
    );
    println!("arc  phone  gamma    accuracy  c_q");
    for (q, a) in lat.arcs().iter().enumerate() {
        println!(
            "{q:>3}  {:<5}  {:.4}   {:>7.3}   {:.4}",
            a.phone, fb.gamma[q], corr[q], st.c_q[q]
        );
    }

    let occ = state_occupancy(&lat, &fb.gamma, 3)?;
    let mpe = mpe_occupancy(&lat, &st, 3)?;
    for t in 0..lat.num_frames() {
        println!(
            "t={t}  gamma {:?}  gamma_mpe {:?}",
            round(occ.row(t)),
            round(mpe.row(t))
        );
    }
    print!("\ncanonical form:\n{}", serialize_lattice(&lat));
    Ok(())
}

fn round(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
