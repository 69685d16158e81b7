mod common;

use common::*;
use nghf::lattice::{
    approx_phone_accuracy, arc_acoustic_score, forward_backward, log_softmax_rows, mpe_occupancy,
    mpe_stats, parse_lattice, parse_lattices, serialize_lattice, state_occupancy, Lattice,
    TimedPhone,
};
use nghf::{Error, FrameMatrix};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Random lattice, random logits and priors, and a reference taken from one
/// of its paths; returns arc scores and correctness.
fn scored(seed: u64, frames: usize, k: usize) -> (Lattice, Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let lat = random_lattice(&mut r, "u", frames, k, 4, 1000.0);
    let (_, reference) = pick_path(&mut r, &lat);
    let logits = FrameMatrix::from_vec(frames, k, gaussian(&mut r, frames * k)).unwrap();
    let priors: Vec<f64> = gaussian(&mut r, k).iter().map(|x| -2.0 + 0.3 * x).collect();
    let kappa = r.random_range(0.3..1.5);
    let scores = lat
        .total_scores(&log_softmax_rows(&logits), &priors, kappa)
        .unwrap();
    let corr = lat.arc_correctness(&reference).unwrap();
    (lat, scores, corr)
}

#[test]
fn recursions_match_path_enumeration() {
    let mut max_paths = 0;
    for seed in 0..40 {
        let (lat, scores, corr) = scored(seed, 4 + (seed as usize % 9), 5);
        let fb = forward_backward(&lat, &scores).unwrap();
        let st = mpe_stats(&lat, &scores, &fb, &corr).unwrap();
        let en = enumerate_stats(&lat, &scores, &corr);
        max_paths = max_paths.max(en.paths);
        assert!((fb.log_z - en.log_z).abs() < 1e-10, "seed {seed}: logZ");
        assert!((st.c_avg - en.c_avg).abs() < 1e-10, "seed {seed}: c_avg");
        for q in 0..lat.arcs().len() {
            assert!(
                (fb.gamma[q] - en.gamma_q[q]).abs() < 1e-10,
                "seed {seed}: gamma_{q}"
            );
            assert!((st.c_q[q] - en.c_q[q]).abs() < 1e-10, "seed {seed}: c_{q}");
        }
    }
    assert!(max_paths > 20, "generator too small: {max_paths}");
}

#[test]
fn occupancy_conservation_and_zero_sum_mpe() {
    for seed in 100..130 {
        let (lat, scores, corr) = scored(seed, 10, 6);
        let fb = forward_backward(&lat, &scores).unwrap();
        let st = mpe_stats(&lat, &scores, &fb, &corr).unwrap();
        let occ = state_occupancy(&lat, &fb.gamma, 6).unwrap();
        let mpe = mpe_occupancy(&lat, &st, 6).unwrap();
        for t in 0..lat.num_frames() {
            let s: f64 = occ.row(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-8, "seed {seed} frame {t}: {s}");
            let z: f64 = mpe.row(t).iter().sum();
            assert!(z.abs() < 1e-8, "seed {seed} frame {t}: {z}");
        }
        assert!(fb.gamma.iter().all(|g| (-1e-15..=1.0 + 1e-12).contains(g)));
    }
}

#[test]
fn single_path_lattice() {
    let lat = Lattice::new(
        "u",
        nodes(&[0, 2, 3]),
        vec![
            arc(0, 1, "a", 0.0, &[0, 1], Some(1.0)),
            arc(1, 2, "b", 0.0, &[1], Some(0.5)),
        ],
    )
    .unwrap();
    let scores = [-1.25, -0.5];
    let fb = forward_backward(&lat, &scores).unwrap();
    assert_eq!(fb.gamma, vec![1.0, 1.0]);
    assert!((fb.log_z + 1.75).abs() < 1e-15);
    let st = mpe_stats(&lat, &scores, &fb, &[1.0, 0.5]).unwrap();
    assert_eq!(st.c_avg, 1.5);
    assert_eq!(st.c_q, vec![1.5, 1.5]);
}

#[test]
fn parallel_paths() {
    let two = Lattice::new(
        "u",
        nodes(&[0, 1]),
        vec![
            arc(0, 1, "a", 0.0, &[0], None),
            arc(0, 1, "b", 0.0, &[1], None),
        ],
    )
    .unwrap();
    let fb = forward_backward(&two, &[-0.7, -0.7]).unwrap();
    assert!(fb.gamma.iter().all(|g| (g - 0.5).abs() < 1e-15));

    let three = Lattice::new(
        "u",
        nodes(&[0, 1, 1, 1, 2]),
        vec![
            arc(0, 1, "a", 0.0, &[0], None),
            arc(0, 2, "b", 0.0, &[1], None),
            arc(0, 3, "c", 0.0, &[2], None),
            arc(1, 4, "a", 0.0, &[0], None),
            arc(2, 4, "b", 0.0, &[1], None),
            arc(3, 4, "c", 0.0, &[2], None),
        ],
    )
    .unwrap();
    let scores = [0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln(), 0.0, 0.0, 0.0];
    let fb = forward_backward(&three, &scores).unwrap();
    let en = enumerate_stats(&three, &scores, &[0.0; 6]);
    for (q, want) in [0.5, 0.3, 0.2, 0.5, 0.3, 0.2].iter().enumerate() {
        assert!((fb.gamma[q] - want).abs() < 1e-12);
        assert!((en.gamma_q[q] - want).abs() < 1e-12);
    }
    assert!(fb.log_z.abs() < 1e-12);
}

#[test]
fn two_equiprobable_paths_with_different_correctness() {
    let lat = Lattice::new(
        "u",
        nodes(&[0, 2]),
        vec![
            arc(0, 1, "a", 0.0, &[0, 0], Some(2.0)),
            arc(0, 1, "b", 0.0, &[1, 1], Some(1.0)),
        ],
    )
    .unwrap();
    let scores = [0.0, 0.0];
    let fb = forward_backward(&lat, &scores).unwrap();
    let st = mpe_stats(&lat, &scores, &fb, &[2.0, 1.0]).unwrap();
    assert!((st.c_avg - 1.5).abs() < 1e-15);
    assert!((st.gamma_q[0] * (st.c_q[0] - st.c_avg) - 0.25).abs() < 1e-15);
    assert!((st.gamma_q[1] * (st.c_q[1] - st.c_avg) + 0.25).abs() < 1e-15);
}

#[test]
fn equally_correct_paths_give_zero_mpe_statistics() {
    for seed in 200..210 {
        let (lat, scores, _) = scored(seed, 8, 4);
        // Correctness proportional to duration: every full path totals 0.75 * T.
        let per_frame: Vec<f64> = (0..lat.arcs().len())
            .map(|q| 0.75 * (lat.arc_end_frame(q) - lat.arc_start_frame(q)) as f64)
            .collect();
        let fb = forward_backward(&lat, &scores).unwrap();
        let st = mpe_stats(&lat, &scores, &fb, &per_frame).unwrap();
        assert!((st.c_avg - 0.75 * 8.0).abs() < 1e-12);
        assert!(st.c_q.iter().all(|c| (c - st.c_avg).abs() < 1e-12));
    }
}

#[test]
fn phone_accuracy_cases() {
    let reference = vec![TimedPhone::new("a", 0, 4), TimedPhone::new("b", 4, 8)];
    assert_eq!(approx_phone_accuracy("a", 0, 4, &reference).unwrap(), 1.0);
    assert_eq!(approx_phone_accuracy("c", 8, 10, &reference).unwrap(), -1.0);
    assert_eq!(approx_phone_accuracy("a", 2, 4, &reference).unwrap(), 0.0);
    // Different label, full overlap: -1 + 1 = 0.
    assert_eq!(approx_phone_accuracy("c", 4, 8, &reference).unwrap(), 0.0);
    assert!(matches!(
        approx_phone_accuracy("a", 0, 1, &[]),
        Err(Error::Empty(_))
    ));
}

#[test]
fn acoustic_score_cases() {
    let arc3 = arc(0, 1, "a", 0.0, &[0, 1, 0], None);
    let uniform = FrameMatrix::zeros(3, 2);
    let pri = vec![0.5f64.ln(); 2];
    assert!(
        arc_acoustic_score(&arc3, 0, &uniform, &pri, 1.0)
            .unwrap()
            .abs()
            < 1e-15
    );

    let mut r = rng(5);
    let logits = FrameMatrix::from_vec(6, 3, gaussian(&mut r, 18)).unwrap();
    let priors = gaussian(&mut r, 3);
    assert_eq!(
        arc_acoustic_score(&arc3, 1, &logits, &priors, 0.0).unwrap(),
        0.0
    );

    let arc4 = arc(0, 1, "a", 0.0, &[2, 0, 1, 1], None);
    let got = arc_acoustic_score(&arc4, 2, &logits, &priors, 0.8).unwrap();
    let mut want = 0.0;
    for (k, &s) in arc4.alignment.iter().enumerate() {
        let row = logits.row(2 + k);
        let lse = row.iter().map(|a| a.exp()).sum::<f64>().ln();
        want += row[s] - lse - priors[s];
    }
    assert!((got - 0.8 * want).abs() < 1e-12);
    assert!(arc_acoustic_score(&arc4, 3, &logits, &priors, 1.0).is_err());
}

#[test]
fn text_format_round_trip() {
    let text = "# three arcs\nLATTICE utt1 3 3\nN 0 0\nN 1 2\nN 2 3\nA 0 1 a -0.5 0,1\nA 0 2 c -1 2,2,2 0.25\nA 1 2 b 0 1\n";
    let lat = parse_lattice(text).unwrap();
    let again = parse_lattice(&serialize_lattice(&lat)).unwrap();
    assert_eq!(serialize_lattice(&again), serialize_lattice(&lat));
    assert_eq!(again.canonical(), lat.canonical());
    assert_eq!(
        lat.arcs()
            .iter()
            .filter(|a| a.correctness.is_some())
            .count(),
        1
    );
}

#[test]
fn random_lattice_with_many_paths_round_trips() {
    let mut r = rng(77);
    let lat = loop {
        let l = random_lattice(&mut r, "big", 14, 5, 4, 1e6);
        if count_paths(&l) >= 100.0 {
            break l;
        }
    };
    let back = parse_lattice(&serialize_lattice(&lat)).unwrap();
    assert_eq!(back.canonical(), lat.canonical());
    assert_eq!(count_paths(&back), count_paths(&lat));
}

#[test]
fn parse_errors_carry_line_numbers() {
    let bad_order = "LATTICE u 3 2\nN 0 0\nN 1 2\nN 2 1\nA 0 1 a 0 0,0\nA 1 2 b 0 0\n";
    let err = parse_lattice(bad_order).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");

    let dangling = "LATTICE u 2 1\nN 0 0\nN 1 1\nA 0 7 a 0 0\n";
    match parse_lattice(dangling).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 4),
        e => panic!("{e}"),
    }
    let malformed = "LATTICE u 2 1\nN 0 0\nN 1 x\nA 0 1 a 0 0\n";
    match parse_lattice(malformed).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 3),
        e => panic!("{e}"),
    }
    let cyclic = "LATTICE u 4 4\nN 0 0\nN 1 1\nN 2 1\nN 3 2\nA 0 1 a 0 0\nA 1 2 b 0 0\nA 2 1 c 0 0\nA 2 3 d 0 0\n";
    assert!(parse_lattice(cyclic).is_err());
}

#[test]
fn log_z_invariant_under_arc_order() {
    let (lat, scores, _) = scored(300, 9, 4);
    let base = forward_backward(&lat, &scores).unwrap().log_z;
    let mut r = rng(301);
    for _ in 0..5 {
        let mut idx: Vec<usize> = (0..lat.arcs().len()).collect();
        idx.shuffle(&mut r);
        let arcs = idx.iter().map(|&q| lat.arcs()[q].clone()).collect();
        let shuffled = Lattice::new("u", lat.nodes().to_vec(), arcs).unwrap();
        let s: Vec<f64> = idx.iter().map(|&q| scores[q]).collect();
        let z = forward_backward(&shuffled, &s).unwrap().log_z;
        assert!((z - base).abs() < 1e-12);
    }
}

#[test]
fn multi_lattice_files() {
    let mut r = rng(9);
    let lats: Vec<Lattice> = (0..3)
        .map(|i| random_lattice(&mut r, &format!("u{i}"), 6, 3, 2, 50.0))
        .collect();
    let text: String = lats.iter().map(serialize_lattice).collect();
    let back = parse_lattices(&text).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in back.iter().zip(&lats) {
        assert_eq!(a.canonical(), b.canonical());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn occupancies_conserve_mass(seed in 0u64..10_000, frames in 2usize..12) {
        let (lat, scores, corr) = scored(seed, frames, 3);
        let fb = forward_backward(&lat, &scores).unwrap();
        let st = mpe_stats(&lat, &scores, &fb, &corr).unwrap();
        let occ = state_occupancy(&lat, &fb.gamma, 3).unwrap();
        let mpe = mpe_occupancy(&lat, &st, 3).unwrap();
        for t in 0..frames {
            prop_assert!((occ.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-8);
            prop_assert!(mpe.row(t).iter().sum::<f64>().abs() < 1e-8);
        }
    }
}
