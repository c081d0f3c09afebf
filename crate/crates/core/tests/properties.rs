mod common;

use cepc::coordination::{js_distance, pairwise_agreement};
use cepc::data::{decode_binary, encode_binary, DomainDataset};
use cepc::losses::{coral_loss, kl_rows};
use cepc::metrics::f1_metrics;
use cepc::nn::{softmax_rows, Matrix};
use cepc::reliability::{
    build_indicator, pointwise_target_covariance, source_covariance, target_costs, transformation_cost,
    ReliabilityTable, ScoreMode,
};
use cepc::trainer::alpha_schedule;
use proptest::prelude::*;

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0f32..3.0, r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
    })
}

/// Two matrices with the same width and, when `same_rows`, the same height.
fn pair(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, same_rows: bool) -> impl Strategy<Value = (Matrix, Matrix)> {
    (rows.clone(), rows, cols).prop_flat_map(move |(r1, r2, c)| {
        let r2 = if same_rows { r1 } else { r2 };
        let m = move |r: usize| prop::collection::vec(-3.0f32..3.0, r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap());
        (m(r1), m(r2))
    })
}

fn labels(n: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..2, n)
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        if s == 0.0 {
            vec![1.0 / v.len() as f64; v.len()]
        } else {
            v.iter().map(|x| x / s).collect()
        }
    })
}

proptest! {
    #[test]
    fn agreement_is_permutation_invariant(
        sets in (2usize..5, 1usize..30).prop_flat_map(|(m, n)| prop::collection::vec(labels(n), m)),
        rot in 0usize..5,
    ) {
        let refs: Vec<&[u8]> = sets.iter().map(Vec::as_slice).collect();
        let mut permuted = refs.clone();
        permuted.rotate_left(rot % refs.len());
        permuted.reverse();
        let a = pairwise_agreement(&refs).unwrap();
        let b = pairwise_agreement(&permuted).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        let m = refs.len() as f64;
        prop_assert!((0.0..=m * (m - 1.0) + 1e-12).contains(&a));
    }

    #[test]
    fn f1_matches_confusion_matrix(pair in (1usize..60).prop_flat_map(|n| (labels(n), labels(n)))) {
        let (gold, pred) = pair;
        let m = f1_metrics(&gold, &pred).unwrap();
        let (f, p, r) = common::brute_f1(&gold, &pred);
        prop_assert!((m.f1 - f).abs() < 1e-12 && (m.precision - p).abs() < 1e-12 && (m.recall - r).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&m.f1));
    }

    #[test]
    fn indicator_rows_are_one_hot(
        n in 1usize..20, m in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut r = common::rng(seed, "indicator");
        let cost = Matrix::<f64>::from_vec(n, m, (0..n * m).map(|_| rand::Rng::random_range(&mut r, 0.0..5.0)).collect()).unwrap();
        let q = Matrix::<f64>::from_vec(n, m, (0..n * m).map(|_| rand::Rng::random_range(&mut r, 1e-3..10.0)).collect()).unwrap();
        let ids = (0..n).map(|i| format!("t{i}")).collect();
        let names = (0..m).map(|i| format!("s{i}")).collect();
        let table = ReliabilityTable::from_parts(ids, names, cost, q, ScoreMode::Full).unwrap();
        for doc in 0..n {
            let row: Vec<u8> = (0..m).map(|s| table.indicator(doc, s)).collect();
            prop_assert_eq!(row.iter().map(|&v| usize::from(v)).sum::<usize>(), 1);
        }
        prop_assert_eq!(table.counts().iter().sum::<usize>(), n);
    }

    #[test]
    fn raising_capacity_or_cutting_cost_keeps_the_winner(
        n in 1usize..10, m in 2usize..5, seed in any::<u64>(), factor in 1.0f64..10.0,
    ) {
        let mut r = common::rng(seed, "monotone");
        let mut cost = Matrix::<f64>::from_vec(n, m, (0..n * m).map(|_| rand::Rng::random_range(&mut r, 0.2..5.0)).collect()).unwrap();
        let mut q = Matrix::<f64>::from_vec(n, m, (0..n * m).map(|_| rand::Rng::random_range(&mut r, 1e-2..10.0)).collect()).unwrap();
        let score = |c: &Matrix<f64>, q: &Matrix<f64>| {
            let mut s = Matrix::<f64>::zeros(n, m);
            for d in 0..n {
                for i in 0..m {
                    s.set(d, i, ScoreMode::Full.score(q.get(d, i), c.get(d, i)));
                }
            }
            build_indicator(&s).unwrap()
        };
        let before = score(&cost, &q);
        for (d, &w) in before.iter().enumerate() {
            q.set(d, w, q.get(d, w) * factor);
            cost.set(d, w, cost.get(d, w) / factor);
        }
        prop_assert_eq!(before, score(&cost, &q));
    }

    #[test]
    fn pointwise_costs_match_the_dense_form((x, s) in pair(2..12, 1..5, false)) {
        let stats = source_covariance(&s).unwrap();
        let fast = target_costs(&x, &stats).unwrap();
        for (r, &c) in fast.iter().enumerate() {
            let dense = transformation_cost(&pointwise_target_covariance(&x, r).unwrap(), &stats.full_cov).unwrap();
            prop_assert!((c - dense).abs() <= 1e-9 * (1.0 + dense));
        }
    }

    #[test]
    fn pointwise_covariances_sum_to_the_sample_covariance(x in matrix(2..15, 1..5)) {
        let (n, d) = x.shape();
        let oracle = common::brute_covariance(&x);
        let mut sum = Matrix::<f64>::zeros(d, d);
        for r in 0..n {
            sum.add_assign(&pointwise_target_covariance(&x, r).unwrap()).unwrap();
        }
        let via_stats = source_covariance(&x).unwrap().full_cov;
        for a in 0..d {
            for b in 0..d {
                prop_assert!((sum.get(a, b) - oracle[a][b]).abs() < 1e-9);
                prop_assert!((via_stats.get(a, b) - oracle[a][b]).abs() < 1e-9);
                prop_assert!((sum.get(a, b) - sum.get(b, a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coral_is_symmetric_and_nonnegative((a, b) in pair(2..10, 1..5, false)) {
        let ab = coral_loss(&a, &b).unwrap().value;
        let ba = coral_loss(&b, &a).unwrap().value;
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab));
        prop_assert!(coral_loss(&a, &a).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_itself((logits, other) in pair(1..6, 2..5, true)) {
        let p = softmax_rows(&logits);
        let q = softmax_rows(&other);
        prop_assert!(kl_rows(&p, &q).unwrap().iter().all(|&v| v >= -1e-7));
        prop_assert!(kl_rows(&p, &p).unwrap().iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn js_distance_is_a_bounded_symmetric_metric(
        pq in (1usize..6).prop_flat_map(|n| (distribution(n), distribution(n), distribution(n))),
    ) {
        let (p, q, r) = pq;
        let pq_ = js_distance(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&pq_));
        prop_assert!((pq_ - js_distance(&q, &p).unwrap()).abs() < 1e-12);
        prop_assert!(js_distance(&p, &p).unwrap() < 1e-6);
        let pr = js_distance(&p, &r).unwrap();
        let rq = js_distance(&r, &q).unwrap();
        prop_assert!(pq_ <= pr + rq + 1e-9);
    }

    #[test]
    fn alpha_decays_monotonically(total in 1usize..500, alpha0 in 0.0f64..2.0) {
        let mut last = f64::INFINITY;
        for t in 0..=total {
            let a = alpha_schedule(t, total, alpha0);
            prop_assert!(a <= last && a >= 0.0);
            last = a;
        }
        prop_assert_eq!(alpha_schedule(0, total, alpha0), alpha0);
        prop_assert_eq!(alpha_schedule(total, total, alpha0), 0.0);
    }

    #[test]
    fn binary_datasets_round_trip(x in matrix(1..20, 1..6), labeled in any::<bool>(), seed in any::<u64>()) {
        let n = x.rows();
        let mut r = common::rng(seed, "roundtrip");
        let lab = (0..n)
            .map(|_| labeled.then(|| rand::Rng::random_range(&mut r, 0u8..2)))
            .collect();
        let ids = (0..n).map(|i| format!("doc-{i}")).collect();
        let ds = DomainDataset::new("dom", ids, lab, x).unwrap();
        let back = decode_binary("dom", &encode_binary(&ds).unwrap()).unwrap();
        prop_assert_eq!(back, ds);
    }
}
