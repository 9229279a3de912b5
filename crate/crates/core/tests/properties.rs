use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use esh::anchor_graph::{build_z, compute_lambda, compute_s, dense_affinity, fit_anchors, AnchorParams};
use esh::codes::PackedCodes;
use esh::dataset::{apply_standardization, generate_synthetic, standardize, FeatureMatrix, LabelSet};
use esh::encoder::QueryMode;
use esh::eval::{evaluate, EvalConfig, GroundTruth};
use esh::optimizer::{cayley_step, init_w, orthogonality_residual, train, Algorithm, TrainConfig};
use esh::pipeline::fit_pipeline;

fn random_matrix(rows: usize, dims: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..rows * dims).map(|_| rng.random_range(-3.0..3.0)).collect();
    FeatureMatrix::new(rows, dims, values).unwrap()
}

fn random_codes(n: usize, k: usize, rng: &mut ChaCha8Rng) -> PackedCodes {
    PackedCodes::from_signs(&DMatrix::from_fn(n, k, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 })).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn restandardizing_is_a_fixed_point(rows in 2usize..40, dims in 1usize..8, seed in any::<u64>()) {
        let x = random_matrix(rows, dims, seed);
        let (once, stats) = standardize(&x).unwrap();
        let (twice, again) = standardize(&once).unwrap();
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        prop_assert!(again.mean.iter().all(|m| m.abs() < 1e-10));
        prop_assert!(again.std.iter().all(|s| (s - 1.0).abs() < 1e-10));
        for i in 0..rows {
            prop_assert_eq!(apply_standardization(x.row(i), &stats).unwrap(), once.row(i).to_vec());
        }
    }

    #[test]
    fn synthetic_data_depends_only_on_seed(seed in any::<u64>()) {
        let a = generate_synthetic(3, 7, 4, 0.5, seed).unwrap();
        let b = generate_synthetic(3, 7, 4, 0.5, seed).unwrap();
        prop_assert_eq!(a.0.as_slice(), b.0.as_slice());
        prop_assert_eq!(a.1, b.1);
    }

    #[test]
    fn anchor_graph_invariants(n in 10usize..120, dims in 1usize..6, m in 2usize..12, s in 1usize..4, seed in any::<u64>()) {
        let s = s.min(m);
        let x = random_matrix(n, dims, seed);
        let params = AnchorParams { anchors: m.min(n), neighbors: s.min(m.min(n)), ..Default::default() };
        let anchors = fit_anchors(&x, &params, seed).unwrap();
        let z = build_z(&x, &anchors).unwrap();
        let lambda = compute_lambda(&z);
        for i in 0..n {
            let sum: f64 = z.row(i).map(|(_, w)| w).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
        let a = dense_affinity(&z, &lambda, 200).unwrap();
        for i in 0..n {
            prop_assert!((a.row(i).sum() - 1.0).abs() < 1e-10);
        }
        let xd = DMatrix::from_row_slice(n, dims, x.as_slice());
        let dense = xd.transpose() * &a * &xd;
        let factored = compute_s(&x, &z, &lambda).unwrap();
        prop_assert!((factored.matrix() - &dense).norm() < 1e-8);
        let sm = factored.matrix();
        prop_assert_eq!(sm, &sm.transpose());
        let eig = sm.clone().symmetric_eigenvalues();
        let top = eig.max().max(0.0);
        prop_assert!(eig.min() >= -1e-8 * top.max(1e-300));
    }

    #[test]
    fn cayley_stays_orthonormal(d in 2usize..64, k_frac in 0.05f64..1.0, tau in 0.0f64..50.0, seed in any::<u64>()) {
        let k = ((d as f64 * k_frac).ceil() as usize).clamp(1, d);
        let w = init_w(d, k, seed).unwrap().into_inner();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let g = DMatrix::from_fn(d, k, |_, _| rng.random_range(-5.0..5.0));
        let y = cayley_step(&w, &g, tau).unwrap();
        prop_assert!(orthogonality_residual(y.matrix()) < 1e-10);
    }

    #[test]
    fn metrics_are_bounded_and_order_free(n in 2usize..60, q in 1usize..12, k in 1usize..20, classes in 1u32..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let db = random_codes(n, k, &mut rng);
        let queries = random_codes(q, k, &mut rng);
        let db_labels = LabelSet::single((0..n).map(|_| rng.random_range(0..classes)).collect());
        let q_labels = LabelSet::single((0..q).map(|_| rng.random_range(0..classes)).collect());
        let cfg = EvalConfig { precision_at: vec![1, 5, 1000], ..Default::default() };
        let report = evaluate(&queries, &db, &GroundTruth::new(q_labels.clone(), db_labels.clone()), &cfg).unwrap();
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        prop_assert!(unit(report.map) && unit(report.macro_map) && unit(report.precision_at_radius));
        prop_assert!(report.precision_at_n.values().all(|&v| unit(v)));

        let again = evaluate(&queries, &db, &GroundTruth::new(q_labels.clone(), db_labels.clone()), &cfg).unwrap();
        prop_assert_eq!(serde_json::to_string(&report).unwrap(), serde_json::to_string(&again).unwrap());

        let order: Vec<usize> = (0..q).rev().collect();
        let shuffled = evaluate(
            &queries.select(&order),
            &db,
            &GroundTruth::new(q_labels.select(&order), db_labels),
            &cfg,
        )
        .unwrap();
        prop_assert!((shuffled.map - report.map).abs() < 1e-12);
        prop_assert!((shuffled.macro_map - report.macro_map).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn trainers_end_below_their_start(seed in any::<u64>(), algo in prop_oneof![Just(Algorithm::Esh1), Just(Algorithm::Esh2)]) {
        let (x, _) = generate_synthetic(4, 30, 10, 0.8, seed).unwrap();
        let x = standardize(&x).unwrap().0;
        let anchors = fit_anchors(&x, &AnchorParams { anchors: 20, ..Default::default() }, seed).unwrap();
        let z = build_z(&x, &anchors).unwrap();
        let s = compute_s(&x, &z, &compute_lambda(&z)).unwrap();
        let cfg = TrainConfig { bits: 4, iterations: 40, algorithm: algo, seed, ..Default::default() };
        let out = train(&x, &s, &cfg).unwrap();
        prop_assert!(out.trace.final_loss() <= out.trace.initial_loss);
    }

    #[test]
    fn query_encoders_are_deterministic(seed in any::<u64>()) {
        let (x, _) = generate_synthetic(3, 30, 6, 0.7, seed).unwrap();
        let cfg = TrainConfig { bits: 4, iterations: 10, seed, ..Default::default() };
        let t = fit_pipeline(&x, &AnchorParams { anchors: 15, ..Default::default() }, &cfg, QueryMode::Graph, false).unwrap();
        let (queries, _) = generate_synthetic(3, 5, 6, 0.7, seed ^ 7).unwrap();
        for mode in [QueryMode::Graph, QueryMode::Linear] {
            let a = t.model.encode_queries(&queries, mode).unwrap();
            let b = t.model.encode_queries(&queries, mode).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

#[cfg(feature = "parallel")]
#[test]
fn thread_count_does_not_change_results() {
    let (x, labels) = generate_synthetic(5, 900, 12, 1.0, 4).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let cfg = TrainConfig { bits: 6, iterations: 15, seed: 4, ..Default::default() };
            let t = fit_pipeline(&x, &AnchorParams { anchors: 40, ..Default::default() }, &cfg, QueryMode::Graph, false).unwrap();
            let codes = t.model.encode_queries(&x, QueryMode::Graph).unwrap();
            let gt = GroundTruth::new(labels.clone(), labels.clone());
            let report = evaluate(&codes, &t.codes, &gt, &EvalConfig::default()).unwrap();
            (t.model.to_bytes(), t.trace.losses(), serde_json::to_string(&report).unwrap())
        })
    };
    assert_eq!(run(1), run(4));
}
