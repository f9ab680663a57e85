mod common;

use candle_core::{DType, Device, Tensor, Var};
use common::{nt_xent_oracle, random_rows};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use t2i_core::contrastive::{
    nt_xent, nt_xent_batch_loss, nt_xent_sample_loss, stack_pair, Branch, ContrastiveConfig, EmbeddingBatch,
};
use t2i_core::Error;

fn tensor(rows: &[Vec<f64>]) -> Tensor {
    let d = rows[0].len();
    Tensor::from_vec(rows.concat(), (rows.len(), d), &Device::Cpu).unwrap()
}

fn loss(e: &[Vec<f64>], e2: &[Vec<f64>], tau: f64) -> f64 {
    nt_xent(&tensor(e), &tensor(e2), tau).unwrap().to_scalar::<f64>().unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

#[test]
fn matches_the_double_loop_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..60 {
        let n = 1 + case % 8;
        let d = 2 + case % 15;
        let tau = [0.1, 0.5, 1.0][case % 3];
        let e = random_rows(&mut rng, n, d);
        let e2 = random_rows(&mut rng, n, d);
        let want = nt_xent_oracle(&e, &e2, tau);
        let got = loss(&e, &e2, tau);
        assert!(rel(got, want) < 1e-9, "case {case}: {got} vs {want}");
    }
}

#[test]
fn single_sample_matches_the_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let e = random_rows(&mut rng, 3, 5);
    let e2 = random_rows(&mut rng, 3, 5);
    let u = stack_pair(
        &EmbeddingBatch::from_rows(&e, Branch::First).unwrap(),
        &EmbeddingBatch::from_rows(&e2, Branch::Second).unwrap(),
    )
    .unwrap();
    let mean: f64 = (0..6)
        .map(|i| nt_xent_sample_loss(&u, i, (i + 3) % 6, 0.5).unwrap())
        .sum::<f64>()
        / 6.0;
    assert!(rel(mean, nt_xent_oracle(&e, &e2, 0.5)) < 1e-12);
}

#[test]
fn closed_form_fixtures() {
    assert!(loss(&[vec![1.0, 2.0]], &[vec![-3.0, 0.5]], 0.5).abs() < 1e-12);
    for n in [2usize, 4, 8] {
        let same = vec![vec![0.4, -1.0, 2.0]; n];
        let want = ((2 * n - 1) as f64).ln();
        for tau in [0.1, 0.5, 1.0] {
            assert!((loss(&same, &same, tau) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-4;
    for case in 0..6 {
        let n = 2 + case % 3;
        let d = 3 + case;
        let tau = [0.1, 0.5, 1.0][case % 3];
        let e = random_rows(&mut rng, n, d);
        let e2 = random_rows(&mut rng, n, d);
        let var = Var::from_tensor(&tensor(&e)).unwrap();
        let fixed = tensor(&e2);
        let l = nt_xent(var.as_tensor(), &fixed, tau).unwrap();
        let grads = l.backward().unwrap();
        let g = grads.get(var.as_tensor()).unwrap().to_vec2::<f64>().unwrap();
        for i in 0..n {
            for k in 0..d {
                let mut up = e.clone();
                let mut down = e.clone();
                up[i][k] += h;
                down[i][k] -= h;
                let fd = (loss(&up, &e2, tau) - loss(&down, &e2, tau)) / (2.0 * h);
                let err = (g[i][k] - fd).abs() / g[i][k].abs().max(fd.abs()).max(1e-3);
                assert!(err < 1e-4, "case {case} ({i},{k}): {} vs {fd}", g[i][k]);
            }
        }
    }
}

#[test]
fn f32_inputs_stay_f32() {
    let e = Tensor::new(&[[1.0f32, 0.0], [0.0, 1.0]], &Device::Cpu).unwrap();
    let l = nt_xent(&e, &e, 0.5).unwrap();
    assert_eq!(l.dtype(), DType::F32);
}

#[test]
fn rejects_invalid_inputs() {
    let ok = tensor(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    assert!(matches!(ContrastiveConfig::new(0.0), Err(Error::Config(_))));
    assert!(matches!(ContrastiveConfig::new(-1.0), Err(Error::Config(_))));
    assert!(matches!(ContrastiveConfig::new(f64::NAN), Err(Error::Config(_))));
    let zero = tensor(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
    assert!(matches!(
        nt_xent(&ok, &zero, 0.5),
        Err(Error::ZeroNorm { row: 1, branch: "second" })
    ));
    let nan = tensor(&[vec![f64::NAN, 0.0], vec![0.0, 1.0]]);
    assert!(matches!(nt_xent(&nan, &ok, 0.5), Err(Error::NonFinite(_))));
    let short = tensor(&[vec![1.0, 0.0]]);
    assert!(matches!(nt_xent(&ok, &short, 0.5), Err(Error::Shape(_))));
    let empty = Tensor::zeros((0, 2), DType::F64, &Device::Cpu).unwrap();
    assert!(matches!(nt_xent(&empty, &empty, 0.5), Err(Error::InvalidInput(_))));
    let u = tensor(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    assert!(matches!(nt_xent_sample_loss(&u, 1, 1, 0.5), Err(Error::InvalidPair(1))));
}

fn rows_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, f64)> {
    (1usize..6, 2usize..8, prop::sample::select(vec![0.1, 0.5, 1.0])).prop_flat_map(|(n, d, tau)| {
        let row = prop::collection::vec(-2.0f64..2.0, d).prop_filter("non-zero", |r| r.iter().any(|v| v.abs() > 1e-2));
        (
            prop::collection::vec(row.clone(), n),
            prop::collection::vec(row, n),
            Just(tau),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn swapping_branches_leaves_the_loss_unchanged((e, e2, tau) in rows_strategy()) {
        prop_assert!((loss(&e, &e2, tau) - loss(&e2, &e, tau)).abs() < 1e-10);
    }

    #[test]
    fn positive_row_scaling_is_invisible((e, e2, tau) in rows_strategy(), k in 0.01f64..100.0) {
        let scaled: Vec<Vec<f64>> = e.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
        prop_assert!((loss(&e, &e2, tau) - loss(&scaled, &e2, tau)).abs() < 1e-9);
    }

    #[test]
    fn permuting_pairs_jointly_leaves_the_loss_unchanged((e, e2, tau) in rows_strategy()) {
        let mut e_r = e.clone();
        let mut e2_r = e2.clone();
        e_r.reverse();
        e2_r.reverse();
        prop_assert!((loss(&e, &e2, tau) - loss(&e_r, &e2_r, tau)).abs() < 1e-10);
    }

    #[test]
    fn loss_lies_between_its_bounds((e, e2, tau) in rows_strategy()) {
        let n = e.len();
        let l = loss(&e, &e2, tau);
        prop_assert!(l >= -1e-12);
        if n > 1 {
            // Every logit lies in [-1/tau, 1/tau].
            let worst = (1.0 + (2 * n - 2) as f64 * (2.0 / tau).exp()).ln();
            prop_assert!(l <= worst + 1e-9);
        }
    }

    #[test]
    fn batch_loss_matches_the_oracle((e, e2, tau) in rows_strategy()) {
        let cfg = ContrastiveConfig::new(tau).unwrap();
        let got = nt_xent_batch_loss(
            &EmbeddingBatch::from_rows(&e, Branch::First).unwrap(),
            &EmbeddingBatch::from_rows(&e2, Branch::Second).unwrap(),
            &cfg,
        ).unwrap().to_scalar::<f64>().unwrap();
        prop_assert!(rel(got, nt_xent_oracle(&e, &e2, tau)) < 1e-9);
    }
}
