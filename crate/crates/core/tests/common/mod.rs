#![allow(dead_code)]

use llngm::distributions::{NoiseFamily, NoiseSpec};
use llngm::gradients::{augmented_grad, augmented_loglik};
use llngm::inference::{to_natural, to_unconstrained};
use llngm::model::{assemble_model, LatentState, Model, PriorSet};
use llngm::operators::{ar1_operator, LatentOperator};
use llngm::sparse::SparseMatrix;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn noise(family: NoiseFamily, mu: f64, sigma: f64, nu: f64, h: Vec<f64>) -> NoiseSpec {
    match family {
        NoiseFamily::Gaussian => NoiseSpec::gaussian(sigma, h),
        NoiseFamily::Nig => NoiseSpec::nig(mu, sigma, nu, h),
        NoiseFamily::Gal => NoiseSpec::gal(mu, sigma, nu, h),
    }
}

/// Model with `A = I`, optional covariates, and the given noise families.
pub fn build(op: LatentOperator, process: NoiseSpec, measurement: NoiseSpec, x: DMatrix<f64>, beta: Vec<f64>) -> Model {
    let n = op.nrows();
    assemble_model(SparseMatrix::identity(n), x, beta, op, process, measurement, &PriorSet::defaults()).unwrap()
}

pub fn gaussian_ar1(n: usize, rho: f64, sigma: f64, sigma_eps: f64) -> Model {
    let op = ar1_operator(rho, n).unwrap();
    let h = op.h().to_vec();
    build(op, NoiseSpec::gaussian(sigma, h), NoiseSpec::gaussian(sigma_eps, vec![1.0; n]), DMatrix::zeros(n, 0), vec![])
}

pub fn nig_ar1_model() -> Model {
    let n = 500;
    let op = ar1_operator(0.8, n).unwrap();
    let h = op.h().to_vec();
    build(op, NoiseSpec::nig(3.0, 2.0, 0.4, h), NoiseSpec::gaussian(1.0, vec![1.0; n]), DMatrix::zeros(n, 0), vec![])
}

pub fn std_normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Log density of `N(mean, cov)` at `x`.
pub fn dense_mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let chol = cov.clone().cholesky().expect("covariance must be positive definite");
    let d = x - mean;
    let z = chol.solve(&d);
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + logdet + d.dot(&z))
}

/// Unconditional covariance of `W` in a Gaussian model:
/// `σ² (Kᵀ diag(1/h) K)⁻¹`.
pub fn dense_prior_cov(k: &SparseMatrix, h: &[f64], sigma: f64) -> DMatrix<f64> {
    let kd = k.to_dense();
    let kinv = kd.try_inverse().expect("K must be invertible");
    let hd = DMatrix::from_diagonal(&DVector::from_column_slice(h));
    &kinv * hd * kinv.transpose() * (sigma * sigma)
}

/// Unconstrained gradient against central differences of the augmented
/// log-likelihood; returns the worst relative error.
pub fn max_fd_rel_error(model: &Model, theta: &[f64], y: &[f64], state: &LatentState, step: f64) -> f64 {
    let t = model.transforms();
    let u = to_unconstrained(theta, &t).unwrap();
    let g = augmented_grad(model, theta, y, state).unwrap();
    let f = |u: &[f64]| augmented_loglik(model, &to_natural(u, &t).unwrap(), y, state).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..u.len() {
        let mut up = u.clone();
        let mut dn = u.clone();
        up[j] += step;
        dn[j] -= step;
        let fd = (f(&up) - f(&dn)) / (2.0 * step);
        let err = (g[j] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}

/// Nelder-Mead minimization with restarts.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], scale: f64, tol: f64, max_evals: usize) -> Vec<f64> {
    let n = x0.len();
    let mut best = x0.to_vec();
    for _ in 0..3 {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for i in 0..n {
            let mut p = best.clone();
            p[i] += scale;
            simplex.push(p);
        }
        let mut vals: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
        let mut evals = n + 1;
        while evals < max_evals {
            let mut idx: Vec<usize> = (0..=n).collect();
            idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
            vals = idx.iter().map(|&i| vals[i]).collect();
            if (vals[n] - vals[0]).abs() < tol {
                break;
            }
            let centroid: Vec<f64> =
                (0..n).map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
            let along =
                |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };
            let xr = along(-1.0);
            let fr = f(&xr);
            evals += 1;
            if fr < vals[0] {
                let xe = along(-2.0);
                let fe = f(&xe);
                evals += 1;
                if fe < fr {
                    simplex[n] = xe;
                    vals[n] = fe;
                } else {
                    simplex[n] = xr;
                    vals[n] = fr;
                }
            } else if fr < vals[n - 1] {
                simplex[n] = xr;
                vals[n] = fr;
            } else {
                let xc = if fr < vals[n] { along(-0.5) } else { along(0.5) };
                let fc = f(&xc);
                evals += 1;
                if fc < vals[n].min(fr) {
                    simplex[n] = xc;
                    vals[n] = fc;
                } else {
                    for i in 1..=n {
                        simplex[i] = (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                        vals[i] = f(&simplex[i]);
                    }
                    evals += n;
                }
            }
        }
        let i = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        best = simplex[i].clone();
    }
    best
}

pub fn report(number: usize, title: &str, pass: bool, detail: &str) {
    println!("criterion {number} [{title}]: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}
