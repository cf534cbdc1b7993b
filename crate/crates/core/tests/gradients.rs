mod common;

use common::*;
use llngm::distributions::NoiseFamily;
use llngm::gibbs::gibbs_run;
use llngm::gradients::{dense_trace_term, log_abs_det, mc_gradient, rb_gradient, trace_term};
use llngm::mesh::{build_interval_mesh, Mesh1D};
use llngm::model::simulate;
use llngm::operators::{advdiff_operator, ar1_operator, operator_dtheta, pinned_rw_operator, replicate_operator};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_nig_model() -> llngm::model::Model {
    let op = ar1_operator(0.6, 30).unwrap();
    let h = op.h().to_vec();
    build(
        op,
        noise(NoiseFamily::Nig, 1.0, 1.0, 0.8, h),
        noise(NoiseFamily::Gaussian, 0.0, 0.5, 1.0, vec![1.0; 30]),
        DMatrix::zeros(30, 0),
        vec![],
    )
}

fn covariance_trace(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len() as f64;
    (0..rows[0].len())
        .map(|j| {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .sum()
}

#[test]
fn mc_variance_shrinks_with_draws() {
    let model = small_nig_model();
    let theta = model.theta0().to_vec();
    let (y, _) = simulate(&model, &theta, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let reps = 300;
    let mut one = Vec::new();
    let mut many = Vec::new();
    for _ in 0..reps {
        let d1 = gibbs_run(&mut rng, &model, &theta, &y, 31, 30, 1).unwrap();
        one.push(mc_gradient(&model, &theta, &y, &d1).unwrap().g);
        let d25 = gibbs_run(&mut rng, &model, &theta, &y, 30 + 25 * 10, 30, 10).unwrap();
        assert_eq!(d25.states.len(), 25);
        many.push(mc_gradient(&model, &theta, &y, &d25).unwrap().g);
    }
    let ratio = covariance_trace(&one) / covariance_trace(&many);
    // Close to 25 for nearly independent draws.
    assert!(ratio > 12.0 && ratio < 50.0, "variance ratio {ratio}");
}

#[test]
fn rb_and_mc_agree_in_expectation() {
    let model = small_nig_model();
    let theta = model.theta0().to_vec();
    let (y, _) = simulate(&model, &theta, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut mc, mut rb) = (Vec::new(), Vec::new());
    for _ in 0..400 {
        let d = gibbs_run(&mut rng, &model, &theta, &y, 35, 30, 1).unwrap();
        mc.push(mc_gradient(&model, &theta, &y, &d).unwrap().g);
        rb.push(rb_gradient(&model, &theta, &y, &d.states).unwrap().g);
    }
    let n = mc.len() as f64;
    for j in 0..theta.len() {
        let diff: Vec<f64> = mc.iter().zip(&rb).map(|(a, b)| a[j] - b[j]).collect();
        let m = diff.iter().sum::<f64>() / n;
        let se = (diff.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!(m.abs() <= 4.0 * se, "component {j}: mean difference {m}, se {se}");
    }
}

#[test]
fn finite_differences_on_other_operators() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mesh = build_interval_mesh(vec![0.0, 0.3, 0.9, 1.2, 2.0, 2.4]).unwrap();
    let ops = [
        advdiff_operator(1.4, 0.6, 0.8, &mesh, 4).unwrap(),
        pinned_rw_operator(2, &Mesh1D::uniform(12, 0.0, 3.0).unwrap()).unwrap(),
        replicate_operator(&ar1_operator(0.3, 5).unwrap(), 3).unwrap(),
    ];
    for op in ops {
        let n = op.nrows();
        let h = op.h().to_vec();
        let model = build(
            op,
            noise(NoiseFamily::Nig, 0.5, 1.1, 1.3, h),
            noise(NoiseFamily::Nig, -0.2, 0.4, 2.0, vec![1.0; n]),
            DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64),
            vec![0.7],
        );
        let (y, state) = simulate(&model, model.theta0(), &mut rng).unwrap();
        let err = max_fd_rel_error(&model, model.theta0(), &y, &state, 1e-6);
        assert!(err < 1e-5, "{}: {err}", model.operator().kind());
    }
}

#[test]
fn sparse_trace_and_log_det_match_dense() {
    let mesh = build_interval_mesh(vec![0.0, 0.5, 0.8, 1.6, 2.0]).unwrap();
    let op = advdiff_operator(0.9, -0.4, 1.2, &mesh, 3).unwrap();
    let model = build(
        op.clone(),
        noise(NoiseFamily::Gaussian, 0.0, 1.0, 1.0, op.h().to_vec()),
        noise(NoiseFamily::Gaussian, 0.0, 1.0, 1.0, vec![1.0; op.nrows()]),
        DMatrix::zeros(op.nrows(), 0),
        vec![],
    );
    let theta = model.theta0().to_vec();
    for name in ["kappa", "gamma", "c"] {
        let sparse = trace_term(&model, &theta, name).unwrap();
        let dense = dense_trace_term(op.k(), operator_dtheta(&op, name).unwrap()).unwrap();
        assert!((sparse - dense).abs() < 1e-9 * dense.abs().max(1.0), "{name}: {sparse} vs {dense}");
    }
    let det = op.k().to_dense().determinant().abs().ln();
    assert!((log_abs_det(op.k()).unwrap() - det).abs() < 1e-9);
}
