mod common;

use common::*;
use hsdetect::bundle::{decode_bundle, encode_bundle};
use hsdetect::distance::{
    mean_pairwise_distance, mmd2_unbiased, regularized_ot, sinkhorn_divergence, Epsilon,
    KernelSpec, NormOrder, PointSet, SinkhornConfig,
};
use hsdetect::metrics::{roc_auc, LabeledScores};
use hsdetect::selection::{Estimator, StreamKey};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rows(max_n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), 2..=max_n)
}

fn pair() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..=4).prop_flat_map(|d| (rows(8, d), rows(8, d)))
}

fn estimators() -> Vec<Estimator> {
    let mut out: Vec<Estimator> = KernelSpec::grid().into_iter().map(Estimator::Mmd).collect();
    for p in NormOrder::GRID {
        out.push(Estimator::Hausdorff { norm_order: p });
        out.push(Estimator::MeanPairwise { norm_order: p });
    }
    out.push(Estimator::Sinkhorn(SinkhornConfig {
        max_iterations: 100_000,
        ..SinkhornConfig::with_epsilon(0.5)
    }));
    out
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimators_are_translation_invariant((x, y) in pair(), shift in -20.0f64..20.0) {
        let moved = |r: &[Vec<f64>]| -> Vec<Vec<f64>> {
            r.iter().map(|p| p.iter().enumerate().map(|(k, v)| v + shift * (k as f64 + 1.0)).collect()).collect()
        };
        for est in estimators() {
            let a = est.distance(&point_set(&x), &point_set(&y)).unwrap();
            let b = est.distance(&point_set(&moved(&x)), &point_set(&moved(&y))).unwrap();
            prop_assert!(close(a, b, 1e-9), "{}: {a} vs {b}", est.name());
        }
    }

    #[test]
    fn estimators_ignore_point_order((x, y) in pair(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut xs, mut ys) = (x.clone(), y.clone());
        xs.shuffle(&mut rng);
        ys.shuffle(&mut rng);
        for est in estimators() {
            let a = est.distance(&point_set(&x), &point_set(&y)).unwrap();
            let b = est.distance(&point_set(&xs), &point_set(&ys)).unwrap();
            prop_assert!(close(a, b, 1e-9), "{}: {a} vs {b}", est.name());
        }
    }

    #[test]
    fn mmd_is_symmetric((x, y) in pair()) {
        for spec in KernelSpec::grid() {
            let a = mmd2_unbiased(&point_set(&x), &point_set(&y), &spec).unwrap();
            let b = mmd2_unbiased(&point_set(&y), &point_set(&x), &spec).unwrap();
            prop_assert!(close(a, b, 1e-12));
        }
    }

    #[test]
    fn mean_pairwise_matches_oracle((x, y) in pair()) {
        for p in NormOrder::GRID {
            let got = mean_pairwise_distance(&point_set(&x), &point_set(&y), p).unwrap();
            let want = exact_sum(x.iter().flat_map(|a| y.iter().map(move |b| dist(a, b, p))))
                / (x.len() * y.len()) as f64;
            prop_assert!(close(got, want, 1e-12), "p={p}: {got} vs {want}");
        }
    }

    #[test]
    fn sinkhorn_is_symmetric_and_nonnegative_ot((x, y) in pair()) {
        let cfg = SinkhornConfig { max_iterations: 100_000, ..SinkhornConfig::default() };
        let a = sinkhorn_divergence(&point_set(&x), &point_set(&y), &cfg).unwrap();
        let b = sinkhorn_divergence(&point_set(&y), &point_set(&x), &cfg).unwrap();
        prop_assert!(close(a, b, 1e-5), "{a} vs {b}");
        prop_assert!(regularized_ot(&point_set(&x), &point_set(&y), &cfg).unwrap() >= 0.0);
    }

    #[test]
    fn auroc_is_invariant_to_monotone_maps(
        data in prop::collection::vec((0u8..=1, -50i32..50), 2..120),
    ) {
        let labels: Vec<u8> = data.iter().map(|d| d.0).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let scores: Vec<f64> = data.iter().map(|d| d.1 as f64 / 7.0).collect();
        let mapped: Vec<f64> = scores.iter().map(|s| (s * 0.3).exp() * 4.0 - 1.0).collect();
        let a = roc_auc(&LabeledScores::new(labels.clone(), scores.clone()).unwrap()).unwrap();
        let b = roc_auc(&LabeledScores::new(labels.clone(), mapped).unwrap()).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(a, auc_pair_count(&labels, &scores));

        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        let c = roc_auc(&LabeledScores::new(labels.clone(), flipped).unwrap()).unwrap();
        prop_assert!((a + c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auroc_ignores_sample_order(
        data in prop::collection::vec((0u8..=1, -20i32..20), 2..80),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let labels: Vec<u8> = data.iter().map(|d| d.0).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let mut shuffled = data.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let auc = |d: &[(u8, i32)]| {
            roc_auc(&LabeledScores::new(d.iter().map(|v| v.0).collect(), d.iter().map(|v| v.1 as f64).collect()).unwrap()).unwrap()
        };
        prop_assert_eq!(auc(&data), auc(&shuffled));
    }

    #[test]
    fn bundles_round_trip(seed in any::<u64>(), p in 1usize..6, r in 1usize..6, d in 1usize..6, n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keys: Vec<StreamKey> = (0..n as u32).map(|h| StreamKey::head(h % 2, h)).collect();
        if seed % 3 == 0 {
            keys.push(StreamKey::whole_layer(7));
        }
        let b = random_bundle(&mut rng, "s", &keys, p, r, d);
        let bytes = encode_bundle(&b).unwrap();
        let back = decode_bundle(&bytes, "s").unwrap();
        prop_assert_eq!(&back, &b);
        prop_assert_eq!(encode_bundle(&back).unwrap(), bytes);
    }
}

#[test]
fn sinkhorn_interpolates_between_ot_and_mmd() {
    let x = vec![vec![0.0, 0.0], vec![1.0, 0.5]];
    let y = vec![vec![0.3, 1.2], vec![2.0, -0.4]];
    let q = 1.0;
    let at = |eps: f64| {
        let cfg = SinkhornConfig {
            epsilon: Epsilon::Absolute(eps),
            cost_exponent: q,
            max_iterations: 500_000,
            convergence_tol: 1e-8,
            ..SinkhornConfig::default()
        };
        sinkhorn_divergence(&point_set(&x), &point_set(&y), &cfg).unwrap()
    };
    let ot = 2.0 * exact_ot_2x2(&x, &y, q);
    let mmd = neg_cost_mmd_biased(&x, &y, q);
    let (small, mid, large) = (at(1e-3), at(1.0), at(1e4));
    assert!((small - ot).abs() < 1e-2, "{small} vs {ot}");
    assert!((large - mmd).abs() < 1e-2, "{large} vs {mmd}");
    let (lo, hi) = (ot.min(mmd), ot.max(mmd));
    assert!(
        mid >= lo - 1e-9 && mid <= hi + 1e-9,
        "{mid} outside [{lo}, {hi}]"
    );
}

#[test]
fn sinkhorn_self_divergence_is_zero_for_duplicated_points() {
    let x = PointSet::from_rows(&[[0.0, 0.0], [0.0, 0.0], [3.0, 1.0]]).unwrap();
    let sd = sinkhorn_divergence(&x, &x, &SinkhornConfig::default()).unwrap();
    assert!(sd.abs() <= 1e-9);
}

#[test]
fn sinkhorn_of_a_relabeled_copy_is_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_rows(&mut rng, 6, 3, 2.0);
    let mut y = x.clone();
    y.rotate_left(2);
    let cfg = SinkhornConfig {
        max_iterations: 200_000,
        ..SinkhornConfig::default()
    };
    let sd = sinkhorn_divergence(&point_set(&x), &point_set(&y), &cfg).unwrap();
    assert!(sd.abs() <= 1e-5, "{sd}");
}
