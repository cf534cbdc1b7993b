//! Stochastic gradient Langevin dynamics on the unconstrained scale.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Anything that can produce a (possibly noisy) gradient of a negative
/// log-density at an unconstrained point.
pub trait GradientSource {
    fn gradient(&mut self, u: &[f64]) -> Result<Vec<f64>>;
}

impl<F: FnMut(&[f64]) -> Result<Vec<f64>>> GradientSource for F {
    fn gradient(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        self(u)
    }
}

/// Step sizes `γ_t = γ₀ (1 + t/τ)^(-0.51)`; `τ = ∞` gives a constant step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgldSchedule {
    pub step0: f64,
    pub tau: f64,
}

impl SgldSchedule {
    pub fn at(&self, t: usize) -> f64 {
        self.step0 * (1.0 + t as f64 / self.tau).powf(-0.51)
    }
}

/// Runs `burnin + n_samples·thin` Langevin steps from `u0` and keeps every
/// `thin`-th iterate after burn-in.
pub fn sgld_run<S: GradientSource + ?Sized, R: Rng + ?Sized>(
    source: &mut S,
    u0: &[f64],
    schedule: SgldSchedule,
    n_samples: usize,
    thin: usize,
    burnin: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if thin == 0 {
        return Err(Error::Input("thinning interval must be at least 1".into()));
    }
    if !(schedule.step0 >= 0.0) {
        return Err(Error::Input(format!("step size must be nonnegative, got {}", schedule.step0)));
    }
    let mut u = u0.to_vec();
    let mut out = Vec::with_capacity(n_samples);
    let total = burnin + n_samples * thin;
    for t in 0..total {
        let gamma = schedule.at(t);
        let g = source.gradient(&u)?;
        let noise = (2.0 * gamma).sqrt();
        let next: Vec<f64> =
            u.iter().zip(&g).map(|(x, gi)| x - gamma * gi + noise * rng.sample::<f64, _>(StandardNormal)).collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration: t,
                reason: format!("non-finite SGLD iterate; last valid state {u:?}"),
            });
        }
        u = next;
        if t >= burnin && (t + 1 - burnin).is_multiple_of(thin) {
            out.push(u.clone());
        }
    }
    Ok(out)
}
