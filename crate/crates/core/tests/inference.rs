mod common;

use common::*;
use llngm::inference::diagnostics::{normalized_inner_stat, CheckpointTrace};
use llngm::inference::{map_fit, to_natural, to_unconstrained, FitOptions, SgldOptions, Transform};
use llngm::model::simulate;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn no_sgld() -> SgldOptions {
    SgldOptions { n_samples: 0, ..Default::default() }
}

proptest! {
    #[test]
    fn transforms_round_trip(u in -15.0..15.0f64) {
        for t in [Transform::Identity, Transform::Log, Transform::StationaryLogit] {
            let x = t.to_natural(u);
            let back = t.to_unconstrained(x).unwrap();
            prop_assert!((back - u).abs() < 1e-8 * u.abs().max(1.0), "{:?}: {} -> {} -> {}", t, u, x, back);
        }
    }

    #[test]
    fn vector_transforms_round_trip(rho in -0.999..0.999f64, s in 0.001..100.0f64, b in -50.0..50.0f64) {
        let t = [Transform::StationaryLogit, Transform::Log, Transform::Identity];
        let theta = [rho, s, b];
        let back = to_natural(&to_unconstrained(&theta, &t).unwrap(), &t).unwrap();
        for (a, b) in theta.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }
}

#[test]
fn zero_iteration_fit_returns_start() {
    let model = gaussian_ar1(20, 0.5, 1.0, 0.3);
    let (y, _) = simulate(&model, model.theta0(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let opts = FitOptions { max_iters: 0, sgld: no_sgld(), ..Default::default() };
    let r = map_fit(&model, &y, &opts).unwrap();
    assert!(r.traces.is_empty());
    assert!(!r.diagnostics.converged);
    assert_eq!(r.diagnostics.iterations, 0);
    assert!(r.theta_map.iter().all(|v| v.is_finite()));
}

#[test]
fn single_chain_has_no_rhat() {
    let model = gaussian_ar1(30, 0.5, 1.0, 0.3);
    let (y, _) = simulate(&model, model.theta0(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let opts = FitOptions { chains: 1, max_iters: 100, window: 5, sgld: no_sgld(), ..Default::default() };
    let r = map_fit(&model, &y, &opts).unwrap();
    assert!(r.diagnostics.rhat.is_none());
    assert_eq!(r.diagnostics.drift.len(), 3);
    assert!(r.diagnostics.s_t_normalized.is_finite());
}

#[test]
fn fit_is_deterministic() {
    let model = gaussian_ar1(30, 0.5, 1.0, 0.3);
    let (y, _) = simulate(&model, model.theta0(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let opts =
        FitOptions { max_iters: 50, sgld: SgldOptions { n_samples: 10, ..Default::default() }, ..Default::default() };
    let a = llngm::inference::fit(&model, &y, &opts).unwrap();
    let b = llngm::inference::fit(&model, &y, &opts).unwrap();
    assert_eq!(a, b);
}

fn traces_from(grads: Vec<Vec<Vec<f64>>>) -> Vec<CheckpointTrace> {
    grads
        .into_iter()
        .enumerate()
        .map(|(t, g)| CheckpointTrace { iteration: t + 1, theta: g.clone(), grad: g, step: 0.1 })
        .collect()
}

#[test]
fn inner_statistic_separates_noise_from_drift() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise: Vec<Vec<Vec<f64>>> = (0..40).map(|_| (0..4).map(|_| std_normals(&mut rng, 3)).collect()).collect();
    let (_, ratio, products) = normalized_inner_stat(&traces_from(noise), 40).unwrap();
    assert!(ratio.abs() < 3.0 / (products as f64).sqrt(), "white noise ratio {ratio}");

    let drift: Vec<Vec<Vec<f64>>> =
        (0..40).map(|_| (0..4).map(|_| std_normals(&mut rng, 3).iter().map(|v| v + 2.0).collect()).collect()).collect();
    let (_, ratio, products) = normalized_inner_stat(&traces_from(drift), 40).unwrap();
    assert!(ratio > 3.0 / (products as f64).sqrt(), "drifting ratio {ratio}");
}
