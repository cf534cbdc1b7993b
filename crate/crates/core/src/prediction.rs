//! Posterior-predictive sampling of the linear predictor and proper
//! scoring rules.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gibbs::gibbs_run;
use crate::model::Model;
use crate::sparse::SparseMatrix;

/// Draws of `η⋆ = A⋆ W + X⋆ β`, one row per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSamples {
    pub eta_star: Vec<Vec<f64>>,
    pub targets: Vec<String>,
}

impl PredictiveSamples {
    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    /// Draws for one target.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.eta_star.iter().map(|r| r[j]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let k = self.eta_star.len() as f64;
        (0..self.n_targets()).map(|j| self.eta_star.iter().map(|r| r[j]).sum::<f64>() / k).collect()
    }

    pub fn sd(&self) -> Vec<f64> {
        let mean = self.mean();
        let k = self.eta_star.len();
        (0..self.n_targets())
            .map(|j| {
                if k < 2 {
                    return 0.0;
                }
                let ss: f64 = self.eta_star.iter().map(|r| (r[j] - mean[j]).powi(2)).sum();
                (ss / (k - 1) as f64).sqrt()
            })
            .collect()
    }
}

/// Gibbs burn-in used before collecting predictive draws.
pub const PREDICT_BURNIN: usize = 100;

/// Runs the Gibbs sampler at `theta` and maps `k` draws of `W` through `A⋆`.
#[allow(clippy::too_many_arguments)]
pub fn posterior_predict<R: Rng + ?Sized>(
    rng: &mut R,
    model: &Model,
    theta: &[f64],
    y: &[f64],
    a_star: &SparseMatrix,
    x_star: &DMatrix<f64>,
    targets: Vec<String>,
    k: usize,
) -> Result<PredictiveSamples> {
    if k == 0 {
        return Err(Error::Input("at least one predictive draw is needed".into()));
    }
    if a_star.ncols() != model.n_latent() {
        return Err(Error::Input(format!(
            "A* has {} columns but the latent dimension is {}",
            a_star.ncols(),
            model.n_latent()
        )));
    }
    if x_star.nrows() != a_star.nrows() || x_star.ncols() != model.x().ncols() {
        return Err(Error::Input(format!(
            "X* is {}x{}, expected {}x{}",
            x_star.nrows(),
            x_star.ncols(),
            a_star.nrows(),
            model.x().ncols()
        )));
    }
    if targets.len() != a_star.nrows() {
        return Err(Error::Input(format!("{} target labels for {} rows of A*", targets.len(), a_star.nrows())));
    }
    let ev = model.evaluate(theta)?;
    let xb: Vec<f64> = if x_star.ncols() == 0 {
        vec![0.0; x_star.nrows()]
    } else {
        (x_star * DVector::from_column_slice(&ev.beta)).as_slice().to_vec()
    };
    let draws = gibbs_run(rng, model, theta, y, PREDICT_BURNIN + k, PREDICT_BURNIN, 1)?;
    let eta_star =
        draws.states.iter().map(|s| a_star.mul_vec(&s.w).iter().zip(&xb).map(|(a, b)| a + b).collect()).collect();
    Ok(PredictiveSamples { eta_star, targets })
}

/// `E|X - y|` and the unbiased `E|X - X'|` over distinct pairs.
fn crps_terms(samples: &[f64], y: f64) -> Result<(f64, f64)> {
    let k = samples.len();
    if k < 2 {
        return Err(Error::Input(format!("scoring needs at least 2 samples, got {k}")));
    }
    if samples.iter().any(|v| !v.is_finite()) || !y.is_finite() {
        return Err(Error::Input("samples and observation must be finite".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let abs_dev = sorted.iter().map(|x| (x - y).abs()).sum::<f64>() / k as f64;
    let pair_sum: f64 = sorted.iter().enumerate().map(|(i, x)| x * (2.0 * i as f64 - k as f64 + 1.0)).sum();
    let pair_mean = 2.0 * pair_sum / (k * (k - 1)) as f64;
    Ok((abs_dev, pair_mean))
}

/// Sample CRPS `E|X - y| - ½ E|X - X'|`; smaller is better.
pub fn crps_sample(samples: &[f64], y: f64) -> Result<f64> {
    let (a, b) = crps_terms(samples, y)?;
    Ok(a - 0.5 * b)
}

/// Scaled CRPS `E|X - y| / E|X - X'| + ½ log E|X - X'|`; smaller is better.
pub fn scrps_sample(samples: &[f64], y: f64) -> Result<f64> {
    let (a, b) = crps_terms(samples, y)?;
    if b <= 0.0 {
        return Err(Error::Input("scaled CRPS is undefined for degenerate samples".into()));
    }
    Ok(a / b + 0.5 * b.ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReport {
    pub mae: f64,
    pub mse: f64,
    pub crps: f64,
    /// `None` when some target has degenerate predictive samples.
    pub scrps: Option<f64>,
}

/// Scores averaged over targets, with the predictive mean as point forecast.
pub fn score_report(pred: &PredictiveSamples, y_true: &[f64]) -> Result<ScoreReport> {
    let m = pred.n_targets();
    if y_true.len() != m {
        return Err(Error::Input(format!("{} observations for {m} predicted targets", y_true.len())));
    }
    if m == 0 {
        return Err(Error::Input("no targets to score".into()));
    }
    let mean = pred.mean();
    let (mut mae, mut mse, mut crps, mut scrps) = (0.0, 0.0, 0.0, Some(0.0));
    for j in 0..m {
        let col = pred.column(j);
        let d = mean[j] - y_true[j];
        mae += d.abs();
        mse += d * d;
        crps += crps_sample(&col, y_true[j])?;
        scrps = match (scrps, scrps_sample(&col, y_true[j])) {
            (Some(acc), Ok(s)) => Some(acc + s),
            _ => None,
        };
    }
    let n = m as f64;
    Ok(ScoreReport { mae: mae / n, mse: mse / n, crps: crps / n, scrps: scrps.map(|s| s / n) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_forecast() {
        assert_eq!(crps_sample(&[2.5; 10], 2.5).unwrap(), 0.0);
        assert!(scrps_sample(&[2.5; 10], 2.5).is_err());
        assert!(crps_sample(&[1.0], 1.0).is_err());
    }

    #[test]
    fn pairwise_term_matches_brute_force() {
        let x = [0.3, -1.2, 2.2, 0.9, 0.0, 5.1];
        let k = x.len();
        let mut pair = 0.0;
        let mut dev = 0.0;
        for i in 0..k {
            dev += (x[i] - 0.4f64).abs();
            for j in 0..k {
                pair += (x[i] - x[j]).abs();
            }
        }
        let want = dev / k as f64 - 0.5 * pair / (k * (k - 1)) as f64;
        assert!((crps_sample(&x, 0.4).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn constant_mean_shift() {
        let pred =
            PredictiveSamples { eta_star: vec![vec![1.0, 2.0], vec![1.0, 2.0]], targets: vec!["a".into(), "b".into()] };
        let r = score_report(&pred, &[1.5, 2.5]).unwrap();
        assert_eq!((r.mae, r.mse), (0.5, 0.25));
        assert!(r.scrps.is_none());
    }
}
