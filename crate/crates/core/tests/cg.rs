mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use nghf::bench::BenchTask;
use nghf::cg::{
    cg_run, evaluation_schedule, precondition, select_update, stabilized_product, CgConfig, CgStop,
    UpdateCandidate,
};
use nghf::distrib::WorkerPool;
use nghf::loss::LossKind;
use nghf::model::ShareCounts;
use nghf::optim::{CurvatureBatch, CurvatureKind};
use nghf::param::{dot, norm};
use nghf::{Error, Precision};
use proptest::prelude::*;

fn plain(max_iters: usize) -> CgConfig {
    CgConfig {
        max_iters,
        stabilize: false,
        precondition: false,
        ..CgConfig::default()
    }
}

fn dense(a: &DMatrix<f64>) -> impl FnMut(&[f64]) -> nghf::Result<Vec<f64>> + '_ {
    move |v| Ok(mat_vec(a, v))
}

/// `Q diag(λ) Qᵀ` with `Q` from the QR factors of a Gaussian matrix.
fn spd(dim: usize, eigen: &[f64], seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let q = DMatrix::from_vec(dim, dim, gaussian(&mut r, dim * dim))
        .qr()
        .q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(dim, |i, _| eigen[i % eigen.len()]));
    let a = &q * d * q.transpose();
    ((&a + a.transpose()) * 0.5, gaussian(&mut r, dim))
}

fn residual(a: &DMatrix<f64>, x: &[f64], b: &[f64]) -> f64 {
    let ax = mat_vec(a, x);
    norm(&b.iter().zip(&ax).map(|(p, q)| p - q).collect::<Vec<_>>())
}

#[test]
fn identity_system() {
    let a = DMatrix::identity(2, 2);
    let out = cg_run(
        &[3.0, 4.0],
        &[1.0, 1.0],
        dense(&a),
        &ShareCounts::ones(2),
        &plain(8),
    )
    .unwrap();
    assert_eq!(out.trace[0].alpha, 1.0);
    assert_eq!(out.candidates[0].delta, vec![3.0, 4.0]);
    assert_eq!(out.trace[0].residual_norm, 0.0);
    assert_eq!(out.iterations(), 1);
    assert_eq!(out.stop, CgStop::Converged);
}

#[test]
fn diagonal_system() {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
    let out = cg_run(
        &[2.0, 4.0],
        &[1.0, 1.0],
        dense(&a),
        &ShareCounts::ones(2),
        &plain(8),
    )
    .unwrap();
    let last = out.candidates.last().unwrap();
    assert!(last.iteration <= 2);
    assert!(residual(&a, &last.delta, &[2.0, 4.0]) < 1e-12);
    assert!((last.delta[0] - 1.0).abs() < 1e-12 && (last.delta[1] - 1.0).abs() < 1e-12);
}

#[test]
fn two_distinct_eigenvalues_in_two_steps() {
    let (a, b) = spd(5, &[1.5, 7.0], 3);
    let out = cg_run(&b, &[0.0; 5], dense(&a), &ShareCounts::ones(5), &plain(2)).unwrap();
    assert!(residual(&a, &out.candidates[1].delta, &b) < 1e-8);
}

#[test]
fn matches_direct_solve_within_dimension_iterations() {
    for (dim, seed) in [(8, 1), (20, 2), (64, 3)] {
        let eigen: Vec<f64> = (0..dim)
            .map(|i| 1.0 + 4.0 * i as f64 / dim as f64)
            .collect();
        let (a, b) = spd(dim, &eigen, seed);
        let x = a
            .clone()
            .lu()
            .solve(&DVector::from_column_slice(&b))
            .unwrap();
        let out = cg_run(
            &b,
            &vec![0.0; dim],
            dense(&a),
            &ShareCounts::ones(dim),
            &plain(dim),
        )
        .unwrap();
        let got = &out.candidates.last().unwrap().delta;
        assert!(rel_l2(got, x.as_slice()) < 1e-6, "dim {dim}");
    }
}

#[test]
fn k_distinct_eigenvalues_terminate_at_k() {
    for k in 1..=6 {
        let eigen: Vec<f64> = (0..k)
            .map(|i| 1.0 + 9.0 * i as f64 / (k.max(2) - 1) as f64)
            .collect();
        let (a, b) = spd(48, &eigen, 10 + k as u64);
        let out = cg_run(&b, &[0.0; 48], dense(&a), &ShareCounts::ones(48), &plain(k)).unwrap();
        let x = &out.candidates[k - 1].delta;
        assert!(residual(&a, x, &b) < 1e-8, "k={k}: {}", residual(&a, x, &b));
    }
}

#[test]
fn directions_are_conjugate_and_quadratic_decreases() {
    let eigen: Vec<f64> = (0..30).map(|i| 1.0 + i as f64).collect();
    let (a, b) = spd(30, &eigen, 4);
    let out = cg_run(
        &b,
        &[0.0; 30],
        dense(&a),
        &ShareCounts::ones(30),
        &plain(12),
    )
    .unwrap();
    let mut prev = vec![0.0; 30];
    let mut dirs = Vec::new();
    for c in &out.candidates {
        dirs.push(
            c.delta
                .iter()
                .zip(&prev)
                .map(|(x, y)| x - y)
                .collect::<Vec<f64>>(),
        );
        prev = c.delta.clone();
    }
    let a_norm = a.norm();
    for i in 0..dirs.len() {
        for j in 0..i {
            let c =
                dot(&dirs[i], &mat_vec(&a, &dirs[j])) / (norm(&dirs[i]) * norm(&dirs[j]) * a_norm);
            assert!(c.abs() < 1e-8, "({i},{j}): {c:e}");
        }
    }
    let q = |x: &[f64]| -dot(&b, x) + 0.5 * dot(x, &mat_vec(&a, x));
    let mut last = 0.0;
    for c in &out.candidates {
        assert!((c.quad_value - q(&c.delta)).abs() < 1e-9 * (1.0 + q(&c.delta).abs()));
        assert!(c.quad_value <= last + 1e-10);
        last = c.quad_value;
    }
}

#[test]
fn first_step_is_optimal_gradient_step() {
    let (a, grad) = spd(10, &[1.0, 2.0, 5.0], 5);
    let b: Vec<f64> = grad.iter().map(|g| -g).collect();
    let out = cg_run(&b, &[0.0; 10], dense(&a), &ShareCounts::ones(10), &plain(3)).unwrap();
    let alpha = out.trace[0].alpha;
    assert!((alpha - dot(&grad, &grad) / dot(&grad, &mat_vec(&a, &grad))).abs() < 1e-14);
    for (d, g) in out.candidates[0].delta.iter().zip(&grad) {
        assert!((d + alpha * g).abs() < 1e-14);
    }
}

#[test]
fn negative_curvature_stops_with_earlier_candidates() {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
    let out = cg_run(
        &[1.0, 1.0],
        &[0.0; 2],
        dense(&a),
        &ShareCounts::ones(2),
        &plain(5),
    )
    .unwrap();
    assert_eq!(out.stop, CgStop::NegativeCurvature);
    assert!(out.flagged());
    assert!(out.candidates.is_empty());

    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, -1.0]));
    let out = cg_run(
        &[1.0, 1.0, 0.1],
        &[0.0; 3],
        dense(&a),
        &ShareCounts::ones(3),
        &plain(5),
    )
    .unwrap();
    assert_eq!(out.stop, CgStop::NegativeCurvature);
    assert!(!out.candidates.is_empty());
}

#[test]
fn non_finite_product_stops_the_run() {
    let mut calls = 0;
    let out = cg_run(
        &[1.0, 2.0],
        &[0.0; 2],
        |v: &[f64]| {
            calls += 1;
            Ok(if calls == 2 {
                vec![f64::NAN; 2]
            } else {
                vec![2.0 * v[0], 3.0 * v[1]]
            })
        },
        &ShareCounts::ones(2),
        &plain(5),
    )
    .unwrap();
    assert_eq!(out.stop, CgStop::NonFinite);
    assert_eq!(out.iterations(), 1);
    assert!(cg_run(
        &[f64::NAN],
        &[0.0],
        |v: &[f64]| Ok(v.to_vec()),
        &ShareCounts::ones(1),
        &plain(2)
    )
    .is_err());
}

#[test]
fn damping_adds_identity() {
    let (a, b) = spd(6, &[0.5, 3.0], 6);
    let damped = CgConfig {
        damping: 2.5,
        ..plain(6)
    };
    let out = cg_run(&b, &[0.0; 6], dense(&a), &ShareCounts::ones(6), &damped).unwrap();
    let shifted = &a + DMatrix::identity(6, 6) * 2.5;
    let x = shifted.lu().solve(&DVector::from_column_slice(&b)).unwrap();
    assert!(rel_l2(&out.candidates.last().unwrap().delta, x.as_slice()) < 1e-10);
}

#[test]
fn precondition_divides_by_counts() {
    let v = [2.0, -4.0, 6.0];
    assert_eq!(precondition(&v, &ShareCounts::ones(3)), v.to_vec());
    assert_eq!(
        precondition(&v, &ShareCounts::new(vec![1, 20, 3])),
        vec![2.0, -0.2, 2.0]
    );
}

#[test]
fn preconditioned_cg_solves_the_same_system() {
    let counts = ShareCounts::new(vec![20, 20, 5, 1, 1, 1]);
    let (a, b) = spd(6, &[1.0, 2.0, 3.0, 10.0, 30.0, 100.0], 7);
    let cfg = CgConfig {
        precondition: true,
        ..plain(6)
    };
    let out = cg_run(&b, &[0.0; 6], dense(&a), &counts, &cfg).unwrap();
    let x = a
        .clone()
        .lu()
        .solve(&DVector::from_column_slice(&b))
        .unwrap();
    assert!(rel_l2(&out.candidates.last().unwrap().delta, x.as_slice()) < 1e-8);
}

#[test]
fn preconditioning_helps_on_shared_quadratic() {
    // Parameters used c times gather c-fold curvature: B = D^½ A D^½ with
    // well-conditioned A.
    let counts: Vec<u64> = [20u64, 20, 1, 1]
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, 6))
        .collect();
    let n = counts.len();
    let mut r = rng(8);
    let q = DMatrix::from_vec(n, n, gaussian(&mut r, n * n)).qr().q();
    let lam = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| {
        1.0 + 3.0 * (i as f64 / n as f64)
    }));
    let core = &q * lam * q.transpose();
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        counts.iter().map(|&c| (c as f64).sqrt()),
    ));
    let a = &d * core * &d;
    let a = (&a + a.transpose()) * 0.5;
    let b: Vec<f64> = gaussian(&mut r, n)
        .iter()
        .zip(d.diagonal().iter())
        .map(|(x, s)| x * s)
        .collect();
    let x = a
        .clone()
        .lu()
        .solve(&DVector::from_column_slice(&b))
        .unwrap();
    let q_opt = -0.5 * dot(&b, x.as_slice());
    let sc = ShareCounts::new(counts);
    let first = |pre: bool| {
        let cfg = CgConfig {
            precondition: pre,
            ..plain(n)
        };
        let out = cg_run(&b, &vec![0.0; n], dense(&a), &sc, &cfg).unwrap();
        out.candidates
            .iter()
            .find(|c| c.quad_value <= 0.9 * q_opt)
            .map(|c| c.iteration)
            .unwrap()
    };
    let (with, without) = (first(true), first(false));
    assert!(with < without, "preconditioned {with}, plain {without}");
}

#[test]
fn stabilised_product_arithmetic() {
    let theta = [6.0, 8.0];
    let v = [0.06, 0.08];
    let mut seen = Vec::new();
    let out = stabilized_product(
        |x| {
            seen.push(x.to_vec());
            Ok(x.iter().map(|y| 3.0 * y).collect())
        },
        &v,
        &theta,
    )
    .unwrap();
    assert!((seen[0][0] - 6.0).abs() < 1e-12 && (seen[0][1] - 8.0).abs() < 1e-12);
    assert!((out[0] - 0.18).abs() < 1e-15 && (out[1] - 0.24).abs() < 1e-15);
    let zero = stabilized_product(|_| panic!("not called"), &[0.0, 0.0], &theta).unwrap();
    assert_eq!(zero, vec![0.0, 0.0]);
}

#[test]
fn stabilised_product_is_exact_in_f64_on_real_models() {
    let pool = WorkerPool::new(1).unwrap();
    for layers in [
        "rnn:tanh:6:3;fc:identity:8",
        "lstm:4:3;fc:identity:8",
        "tdnn:sigmoid:6:-1,0,1;fc:identity:8",
    ] {
        let task = BenchTask::new(layers, LossKind::Mpe, 3).unwrap();
        let p = task.at(Precision::F64);
        let batch = task.batch();
        let curv = CurvatureBatch::build(&task.model, &p, &batch, &task.loss, &pool).unwrap();
        let mut r = rng(9);
        let v: Vec<f64> = gaussian(&mut r, p.len()).iter().map(|x| 1e-5 * x).collect();
        let raw = curv
            .product(CurvatureKind::GaussNewton, 1.0, &v, &pool)
            .unwrap()
            .0;
        let stab = stabilized_product(
            |x| Ok(curv.product(CurvatureKind::GaussNewton, 1.0, x, &pool)?.0),
            &v,
            p.as_slice(),
        )
        .unwrap();
        assert!(rel_l2(&stab, &raw) < 1e-9, "{layers}");
    }
}

fn cands(n: usize) -> Vec<UpdateCandidate> {
    (0..n)
        .map(|i| UpdateCandidate {
            iteration: i + 1,
            delta: vec![i as f64],
            quad_value: -(i as f64),
            eval_loss: None,
        })
        .collect()
}

#[test]
fn selection_rules() {
    let mut one = cands(1);
    assert_eq!(
        select_update(&mut one, |_| panic!("not evaluated"), 1).unwrap(),
        0
    );

    let losses = [0.9, 0.7, 0.8];
    let mut three = cands(3);
    assert_eq!(
        select_update(&mut three, |d| Ok(losses[d[0] as usize]), 1).unwrap(),
        1
    );

    let mut seen = Vec::new();
    let mut eight = cands(8);
    select_update(
        &mut eight,
        |d| {
            seen.push(d[0] as usize + 1);
            Ok(1.0)
        },
        2,
    )
    .unwrap();
    assert_eq!(seen, vec![1, 3, 5, 7, 8]);
    assert_eq!(evaluation_schedule(8, 2), vec![0, 2, 4, 6, 7]);
    assert_eq!(evaluation_schedule(8, 1), (0..8).collect::<Vec<_>>());

    let mut ties = cands(4);
    assert_eq!(
        select_update(&mut ties, |d| Ok(if d[0] >= 1.0 { 0.5 } else { 0.6 }), 1).unwrap(),
        1
    );

    let mut bad = cands(3);
    assert!(matches!(
        select_update(&mut bad, |_| Ok(f64::NAN), 1),
        Err(Error::FailedUpdate(_))
    ));
    let mut bad = cands(3);
    assert!(matches!(
        select_update(&mut bad, |_| Err(Error::NonFinite("x")), 1),
        Err(Error::FailedUpdate(_))
    ));
    assert!(select_update(&mut [], |_| Ok(0.0), 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quadratic_model_is_monotone(seed in 0u64..10_000, dim in 2usize..40, pre in any::<bool>()) {
        let eigen: Vec<f64> = (0..dim).map(|i| 0.1 + (i * i) as f64).collect();
        let (a, b) = spd(dim, &eigen, seed);
        let counts = ShareCounts::new((0..dim).map(|i| 1 + (i % 3) as u64 * 7).collect());
        let cfg = CgConfig { precondition: pre, ..plain(dim.min(16)) };
        let out = cg_run(&b, &vec![0.0; dim], dense(&a), &counts, &cfg).unwrap();
        let mut last = 0.0;
        for c in &out.candidates {
            prop_assert!(c.quad_value <= last + 1e-10);
            last = c.quad_value;
        }
    }
}
