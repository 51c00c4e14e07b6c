mod common;

use common::gradient_checks::*;
use common::random_mlp;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use scoredim::rng;
use scoredim::score_model::{OutputScale, ScoreMap, ScoreModel};

const PROBES: usize = 120;

#[test]
fn parameter_gradient_of_linear_functional() {
    let worst = linear_functional_worst(PROBES);
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

#[test]
fn parameter_gradient_of_dsm_loss() {
    let worst = dsm_loss_worst(PROBES);
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

#[test]
fn penalty_gradient_with_frozen_direction() {
    let worst = frozen_penalty_worst(PROBES);
    assert!(worst <= 1e-3, "worst relative error {worst:e}");
}

#[test]
fn input_vjp_matches_finite_difference_jacobian() {
    let worst = input_vjp_worst(PROBES);
    assert!(worst <= 1e-5, "worst relative error {worst:e}");
}

#[test]
fn vjp_and_jvp_are_adjoint() {
    let worst = adjointness_worst(PROBES);
    assert!(worst <= 1e-3, "worst relative error {worst:e}");
}

#[test]
fn zero_last_layer_has_zero_last_layer_gradient() {
    let m = ScoreModel::init(3, &[8, 8], false, OutputScale::Unit, 5).unwrap();
    let x = Array2::from_shape_vec((2, 3), vec![0.1, -0.2, 0.3, 1.0, 2.0, -1.0]).unwrap();
    let (_, g) = m
        .grad_params(x.view(), None, |out| (out.iter().map(|v| v * v).sum(), out * 2.0))
        .unwrap();
    assert!(g[m.last_layer_weight_range()].iter().all(|&v| v == 0.0));
}

#[test]
fn duplicated_rows_leave_mean_gradient_unchanged() {
    let m = random_mlp(2, &[6], false, 9);
    let mean_sq = |rows: usize| {
        move |out: &Array2<f64>| {
            let l = out.iter().map(|v| v * v).sum::<f64>() / rows as f64;
            (l, out * (2.0 / rows as f64))
        }
    };
    let one = Array2::from_shape_vec((1, 2), vec![0.4, -0.7]).unwrap();
    let two = Array2::from_shape_vec((2, 2), vec![0.4, -0.7, 0.4, -0.7]).unwrap();
    let (l1, g1) = m.grad_params(one.view(), None, mean_sq(1)).unwrap();
    let (l2, g2) = m.grad_params(two.view(), None, mean_sq(2)).unwrap();
    assert!((l1 - l2).abs() <= 1e-15 * l1.abs());
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-12));
    }
}

#[test]
fn forward_is_deterministic() {
    let m = random_mlp(3, &[8], true, 4);
    let mut r = rng::stream(4, 0);
    let x: Vec<f64> = (0..3).map(|_| r.sample(StandardNormal)).collect();
    assert_eq!(m.eval(&x, Some(0.3)).unwrap(), m.eval(&x, Some(0.3)).unwrap());
}
