use proptest::prelude::*;
use sawa_core::nn::{
    mlp_train, Activation, LossKind, MlpModel, Optimizer, OutputHead, TrainConfig,
};
use sawa_core::numeric::{cholesky, derive_seed, mvn_sample, seeded_rng, solve_spd, Matrix};
use sawa_core::regress::{weighted_logistic_fit, LogisticConfig};

fn spd(p: usize, entries: &[f64]) -> Matrix {
    let b = Matrix::from_fn(p, p, |i, j| entries[i * p + j]);
    Matrix::from_fn(p, p, |i, j| {
        let g: f64 = (0..p).map(|k| b.get(i, k) * b.get(j, k)).sum();
        g + if i == j { 0.5 } else { 0.0 }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cholesky_reconstructs_random_spd(p in 1usize..7, entries in prop::collection::vec(-2.0f64..2.0, 36)) {
        let a = spd(p, &entries);
        let l = cholesky(&a).unwrap();
        let llt = Matrix::from_fn(p, p, |i, j| (0..p).map(|k| l.get(i, k) * l.get(j, k)).sum());
        prop_assert!(llt.max_abs_diff(&a) <= 1e-10);
    }

    #[test]
    fn solve_spd_residual_is_small(p in 1usize..7, entries in prop::collection::vec(-2.0f64..2.0, 36),
                                   b in prop::collection::vec(-5.0f64..5.0, 6)) {
        let a = spd(p, &entries);
        let x = solve_spd(&a, &b[..p]).unwrap();
        let ax = a.matvec(&x).unwrap();
        for (u, v) in ax.iter().zip(&b[..p]) {
            prop_assert!((u - v).abs() <= 1e-8 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn sampling_is_a_function_of_the_seed(seed in any::<u64>()) {
        let cov = Matrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.4 });
        let a = mvn_sample(&[0.0, 1.0, -1.0], &cov, 20, &mut seeded_rng(seed)).unwrap();
        let b = mvn_sample(&[0.0, 1.0, -1.0], &cov, 20, &mut seeded_rng(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn derived_streams_do_not_collide(seed in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
        prop_assume!(a != b);
        prop_assert_ne!(derive_seed(seed, a), derive_seed(seed, b));
    }
}

/// A network without hidden layers and a sigmoid head is logistic regression,
/// so full-batch training must land on the same maximum-likelihood fit.
#[test]
fn sigmoid_network_without_hidden_layer_matches_logistic_fit() {
    let mut rng = seeded_rng(3);
    let cov = Matrix::identity(2);
    let x = mvn_sample(&[0.0, 0.0], &cov, 200, &mut rng).unwrap();
    let y: Vec<f64> = x
        .row_iter()
        .enumerate()
        .map(|(i, r)| {
            if r[0] - 0.5 * r[1] + 0.3 * ((i % 7) as f64 - 3.0) > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let w: Vec<f64> = (0..200).map(|i| 0.5 + (i % 3) as f64 * 0.5).collect();

    let oracle = weighted_logistic_fit(&x, &y, &w, 0.0, &LogisticConfig::default()).unwrap();

    let start = MlpModel::zeros(&[2, 1], Activation::Tanh, OutputHead::Sigmoid).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        max_epochs: 3000,
        batch_size: 200,
        weight_decay: 0.0,
        early_stop_patience: 0,
        validation_fraction: 0.0,
        optimizer: Optimizer::Adam,
    };
    let net = mlp_train(
        &start,
        &x,
        &y,
        Some(&w),
        LossKind::WeightedBce,
        &cfg,
        &mut rng,
    )
    .unwrap();
    let p = net.parameters();
    for (got, want) in p[..2].iter().zip(&oracle.beta) {
        assert!((got - want).abs() < 1e-2, "{got} vs {want}");
    }
    assert!((p[2] - oracle.intercept).abs() < 1e-2);
}

#[test]
fn network_json_round_trip_preserves_predictions() {
    let mut rng = seeded_rng(8);
    let net = MlpModel::init(&[3, 5, 1], Activation::Relu, OutputHead::Linear, &mut rng).unwrap();
    let back = MlpModel::from_json(&net.to_json().unwrap()).unwrap();
    let x = Matrix::from_fn(4, 3, |i, j| (i as f64) - (j as f64) * 0.5);
    assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
}
