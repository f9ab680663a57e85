mod common;

use common::{frechet_2d, inception_oracle, sample_moments};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use t2i_core::metrics::{
    build_pools, fid, fid_with, inception_score, inception_score_with, mean_and_covariance, r_precision_embeddings,
    random_unit_vectors, CaptionPool, ClassProbabilities, FeatureSet, FeatureSource,
};
use t2i_core::par::Exec;
use t2i_core::Error;

fn features(rows: &[Vec<f64>]) -> FeatureSet {
    FeatureSet::new(rows, FeatureSource::Real).unwrap()
}

fn random_simplex(rng: &mut impl Rng, m: usize, c: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| {
            let r: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0f64).powi(3)).collect();
            let s: f64 = r.iter().sum();
            r.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

#[test]
fn inception_score_matches_the_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (m, c, s) in [(10, 3, 1), (40, 5, 4), (103, 7, 10), (64, 2, 3)] {
        let p = random_simplex(&mut rng, m, c);
        let got = inception_score(&ClassProbabilities::new(&p).unwrap(), s).unwrap();
        let want = inception_oracle(&p, s);
        assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12, "{got:?} vs {want:?}");
    }
}

#[test]
fn inception_score_fixtures() {
    let uniform = vec![vec![0.25; 4]; 12];
    let (mean, std) = inception_score(&ClassProbabilities::new(&uniform).unwrap(), 3).unwrap();
    assert!((mean - 1.0).abs() < 1e-12 && std.abs() < 1e-12);
    let c = 6;
    let one_hot: Vec<Vec<f64>> = (0..60).map(|i| (0..c).map(|k| if k == i % c { 1.0 } else { 0.0 }).collect()).collect();
    let (mean, _) = inception_score(&ClassProbabilities::new(&one_hot).unwrap(), 1).unwrap();
    assert!((mean - c as f64).abs() < 1e-12);
}

#[test]
fn probability_rows_are_validated() {
    assert!(matches!(ClassProbabilities::new(&[vec![0.5, 0.6]]), Err(Error::InvalidInput(_))));
    assert!(matches!(ClassProbabilities::new(&[vec![1.5, -0.5]]), Err(Error::InvalidInput(_))));
    assert!(matches!(ClassProbabilities::new(&[vec![1.0], vec![0.5, 0.5]]), Err(Error::Shape(_))));
    let ok = ClassProbabilities::new(&[vec![0.5, 0.5]]).unwrap();
    assert!(inception_score(&ok, 2).is_err());
    assert!(inception_score(&ok, 0).is_err());
}

#[test]
fn moments_match_the_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<f64>> = (0..700).map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let (mu, cov) = mean_and_covariance(&features(&rows), Exec::Sequential);
    let (mu_o, cov_o) = sample_moments(&rows);
    for a in 0..5 {
        assert!((mu[a] - mu_o[a]).abs() < 1e-12);
        for b in 0..5 {
            assert!((cov[(a, b)] - cov_o[a][b]).abs() < 1e-12);
        }
    }
}

#[test]
fn fid_matches_the_two_dimensional_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let a: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random_range(-1.0..2.0), rng.random_range(0.0..1.0)]).collect();
        let b: Vec<Vec<f64>> = (0..80)
            .map(|_| {
                let x: f64 = rng.random_range(-1.0..1.0);
                vec![x * 2.0 + 0.5, x + rng.random_range(-0.3..0.3)]
            })
            .collect();
        let (m1, c1) = sample_moments(&a);
        let (m2, c2) = sample_moments(&b);
        let want = frechet_2d(
            [m1[0], m1[1]],
            [[c1[0][0], c1[0][1]], [c1[1][0], c1[1][1]]],
            [m2[0], m2[1]],
            [[c2[0][0], c2[0][1]], [c2[1][0], c2[1][1]]],
        );
        let got = fid(&features(&a), &features(&b)).unwrap();
        assert!((got - want).abs() < 1e-9 * want.max(1.0), "{got} vs {want}");
    }
}

#[test]
fn fid_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a: Vec<Vec<f64>> = (0..200).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    assert!(fid(&features(&a), &features(&a)).unwrap() < 1e-6);
    let shifted: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| v + 0.5).collect()).collect();
    assert!((fid(&features(&a), &features(&shifted)).unwrap() - 1.0).abs() < 1e-9);
    // Rank-deficient: every row on a line.
    let line: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, 2.0 * i as f64, 0.0]).collect();
    assert!(fid(&features(&line), &features(&line)).unwrap() < 1e-6);
}

#[test]
fn fid_rejects_bad_inputs() {
    let a = features(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
    let b = features(&[vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 1.0]]);
    assert!(matches!(fid(&a, &b), Err(Error::Shape(_))));
    let one = features(&[vec![1.0, 2.0]]);
    assert!(matches!(fid(&one, &a), Err(Error::InvalidInput(_))));
    assert!(FeatureSet::new(&[vec![f64::NAN, 1.0]], FeatureSource::Generated).is_err());
}

#[test]
fn sequential_and_parallel_agree_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let a: Vec<Vec<f64>> = (0..1500).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let b: Vec<Vec<f64>> = (0..1100).map(|_| (0..8).map(|_| rng.random_range(-0.5..1.5)).collect()).collect();
    let (fa, fb) = (features(&a), features(&b));
    assert_eq!(
        fid_with(&fa, &fb, Exec::Sequential).unwrap().to_bits(),
        fid_with(&fa, &fb, Exec::Parallel).unwrap().to_bits()
    );
    let p = ClassProbabilities::new(&random_simplex(&mut rng, 500, 9)).unwrap();
    assert_eq!(
        inception_score_with(&p, 10, Exec::Sequential).unwrap(),
        inception_score_with(&p, 10, Exec::Parallel).unwrap()
    );
}

#[test]
fn r_precision_hand_cases() {
    let images = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let bank = vec![vec![1.0, 0.1], vec![0.1, 1.0], vec![-1.0, 0.0]];
    let pools = vec![
        CaptionPool {
            true_index: 0,
            mismatches: vec![1, 2],
        },
        CaptionPool {
            true_index: 0,
            mismatches: vec![1, 2],
        },
    ];
    assert_eq!(r_precision_embeddings(&images, &bank, &pools, Exec::Sequential).unwrap(), 0.5);
    // A tie is a miss.
    let tie = vec![CaptionPool {
        true_index: 0,
        mismatches: vec![1],
    }];
    let same = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
    assert_eq!(r_precision_embeddings(&[vec![1.0, 0.0]], &same, &tie, Exec::Sequential).unwrap(), 0.0);
    let dup = vec![CaptionPool {
        true_index: 0,
        mismatches: vec![0, 1],
    }];
    assert!(r_precision_embeddings(&[vec![1.0, 0.0]], &bank, &dup, Exec::Sequential).is_err());
}

#[test]
fn random_embeddings_sit_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let n = 3000;
    let images = random_unit_vectors(n, 16, &mut rng);
    let bank = random_unit_vectors(400, 16, &mut rng);
    let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..400)).collect();
    let pools = build_pools(&truth, 400, 20, 5).unwrap();
    let r = r_precision_embeddings(&images, &bank, &pools, Exec::default()).unwrap();
    // chance = 1/20; binomial std ~ 0.004
    assert!((r - 0.05).abs() < 0.02, "{r}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inception_score_stays_within_one_and_class_count(seed in any::<u64>(), m in 4usize..60, c in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_simplex(&mut rng, m, c);
        let (mean, std) = inception_score(&ClassProbabilities::new(&p).unwrap(), 2).unwrap();
        prop_assert!(mean >= 1.0 - 1e-12 && mean <= c as f64 + 1e-9);
        prop_assert!(std >= 0.0);
    }

    #[test]
    fn fid_is_symmetric_and_non_negative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let b: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.random_range(-2.0..1.0)).collect()).collect();
        let ab = fid(&features(&a), &features(&b)).unwrap();
        let ba = fid(&features(&b), &features(&a)).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-8 * ab.max(1.0));
    }

    #[test]
    fn fid_is_translation_invariant(seed in any::<u64>(), shift in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let b: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.random_range(-2.0..1.0)).collect()).collect();
        let moved = |rows: &[Vec<f64>]| rows.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect::<Vec<Vec<f64>>>();
        let base = fid(&features(&a), &features(&b)).unwrap();
        let both = fid(&features(&moved(&a)), &features(&moved(&b))).unwrap();
        prop_assert!((base - both).abs() < 1e-8 * base.max(1.0));
    }

    #[test]
    fn pools_never_contain_their_truth(seed in any::<u64>(), bank in 5usize..60) {
        let truth: Vec<usize> = (0..bank).collect();
        let pools = build_pools(&truth, bank, 5, seed).unwrap();
        for p in pools {
            prop_assert_eq!(p.mismatches.len(), 4);
            prop_assert!(!p.mismatches.contains(&p.true_index));
            let mut m = p.mismatches.clone();
            m.sort();
            m.dedup();
            prop_assert_eq!(m.len(), 4);
        }
    }
}
