mod common;

use common::*;
use nghf::cg::CgConfig;
use nghf::distrib::{deterministic_reduce, Partial, WorkerPool};
use nghf::loss::{LossConfig, LossKind};
use nghf::optim::{
    accumulate_gradient, CurvatureBatch, CurvatureKind, OptimizerConfig, OptimizerKind, Trainer,
};
use nghf::Error;

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn part(v: &[f64], s: f64) -> Partial {
    Partial {
        vector: v.to_vec(),
        scalars: vec![s],
    }
}

#[test]
fn reduce_sums_in_key_order() {
    let r = deterministic_reduce(vec![
        ("b".into(), part(&[1.0, 2.0], 1.0)),
        ("a".into(), part(&[0.5, -1.0], 2.0)),
    ])
    .unwrap();
    assert_eq!(r.sum, vec![1.5, 1.0]);
    assert_eq!(r.scalars, vec![3.0]);
    assert_eq!(r.count, 2);

    let empty = deterministic_reduce(vec![]).unwrap();
    assert_eq!(empty.count, 0);
    assert!(empty.sum.is_empty());

    let bad = deterministic_reduce(vec![
        ("a".into(), part(&[1.0], 0.0)),
        ("b".into(), part(&[1.0, 2.0], 0.0)),
    ]);
    assert!(matches!(bad, Err(Error::DimensionMismatch { .. })));
}

#[test]
fn reduce_is_independent_of_arrival_order() {
    let mut r = rng(1);
    let items: Vec<(String, Partial)> = (0..50)
        .map(|i| {
            let v: Vec<f64> = gaussian(&mut r, 8)
                .iter()
                .map(|x| x * 10f64.powi(i % 7 * 3))
                .collect();
            (format!("utt{i:03}"), part(&v, i as f64))
        })
        .collect();
    let base = deterministic_reduce(items.clone()).unwrap();
    for seed in 0..5 {
        let mut shuffled = items.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng(seed));
        assert_eq!(
            bits(&deterministic_reduce(shuffled).unwrap().sum),
            bits(&base.sum)
        );
    }
}

#[test]
fn gradients_and_products_are_bit_identical_across_worker_counts() {
    let (_, m) = model_zoo(3, 4).remove(3);
    let p = random_params(&m, 2, 0.5);
    let utts = toy_batch(3, 9, 6, 3, 4);
    let batch: Vec<_> = utts.iter().collect();
    let loss = LossConfig::uniform(LossKind::Mpe, 0.9, 4).unwrap();
    let v = gaussian(&mut rng(4), p.len());
    let run = |w: usize| {
        let pool = WorkerPool::new(w).unwrap();
        let g = accumulate_gradient(&m, &p, &batch, &loss, &pool).unwrap();
        let curv = CurvatureBatch::build(&m, &p, &batch, &loss, &pool).unwrap();
        let gv = curv
            .product(CurvatureKind::GaussNewton, 1.0, &v, &pool)
            .unwrap()
            .0;
        let fv = curv
            .product(CurvatureKind::Fisher, 1.0, &v, &pool)
            .unwrap()
            .0;
        (bits(&g.raw), g.loss.to_bits(), bits(&gv), bits(&fv))
    };
    let one = run(1);
    for w in [2, 4] {
        assert_eq!(run(w), one, "workers = {w}");
    }
}

#[test]
fn training_trajectory_is_bit_identical_across_worker_counts() {
    let (_, m) = model_zoo(2, 3).remove(2);
    let p = random_params(&m, 5, 0.3);
    let data = toy_batch(6, 24, 5, 2, 3);
    let loss = LossConfig::uniform(LossKind::Mmi, 1.0, 3).unwrap();
    for kind in [OptimizerKind::Nghf, OptimizerKind::Sgd] {
        let cfg = OptimizerConfig {
            kind,
            cg: CgConfig {
                max_iters: 4,
                ..CgConfig::default()
            },
            inner_ng_iters: 2,
            cg_batch_size: 6,
            updates_per_epoch: 3,
            gradient_batch_size: 4,
            ..OptimizerConfig::default()
        };
        let run = |w: usize| {
            let mut t =
                Trainer::new(m.clone(), p.clone(), cfg.clone(), loss.clone(), w, 9).unwrap();
            let mut reports = Vec::new();
            for _ in 0..2 {
                reports.extend(
                    t.run_epoch(&data, None)
                        .unwrap()
                        .into_iter()
                        .map(|r| r.without_times()),
                );
            }
            (bits(t.params.as_slice()), reports)
        };
        let one = run(1);
        for w in [2, 4] {
            let other = run(w);
            assert_eq!(other.0, one.0, "{kind} workers = {w}");
            assert_eq!(other.1, one.1, "{kind} workers = {w}");
        }
    }
}

#[test]
fn failing_items_are_skipped_and_named() {
    let pool = WorkerPool::new(4).unwrap();
    let items: Vec<u32> = (0..20).collect();
    let r = pool
        .map_reduce(
            &items,
            |i| format!("u{i:02}"),
            |&i| {
                if i % 10 == 3 {
                    Err(Error::NonFinite("loss"))
                } else {
                    Ok(part(&[i as f64], 1.0))
                }
            },
        )
        .unwrap();
    assert_eq!(r.count, 18);
    assert_eq!(r.scalars, vec![18.0]);
    assert_eq!(
        r.failures
            .iter()
            .map(|f| f.key.as_str())
            .collect::<Vec<_>>(),
        vec!["u03", "u13"]
    );
    assert!((r.failure_rate() - 0.1).abs() < 1e-15);
}
