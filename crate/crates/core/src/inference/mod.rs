//! Stochastic-gradient MAP estimation over parallel chains, followed by
//! SGLD posterior sampling.

pub mod diagnostics;
pub mod optimizer;
pub mod sgld;
pub mod transforms;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::cholesky::{CholeskyFactor, FactorCache};
use crate::error::{Error, Result};
use crate::gibbs::GibbsChain;
use crate::gradients::{Estimator, GradientContext};
use crate::model::{Model, Role};

use self::diagnostics::{drift_check, normalized_inner_stat, rhat, CheckpointTrace, DriftStat, RhatReport, Thresholds};
use self::optimizer::{Adam, StepSchedule};
use self::sgld::{sgld_run, GradientSource, SgldSchedule};
pub use self::transforms::{to_natural, to_unconstrained, Transform};

#[derive(Debug, Clone, PartialEq)]
pub struct SgldOptions {
    pub n_samples: usize,
    pub step0: f64,
    pub tau: f64,
    pub thin: usize,
    pub burnin: usize,
    pub k: usize,
    pub estimator: Estimator,
    pub warm_sweeps: usize,
    pub seed: u64,
}

impl Default for SgldOptions {
    fn default() -> Self {
        SgldOptions {
            n_samples: 2000,
            step0: 2e-3,
            tau: 5000.0,
            thin: 5,
            burnin: 0,
            k: 5,
            estimator: Estimator::Rb,
            warm_sweeps: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub chains: usize,
    pub max_iters: usize,
    pub checkpoint_every: usize,
    /// Number of trailing checkpoints the diagnostics look at.
    pub window: usize,
    pub k: usize,
    pub estimator: Estimator,
    pub schedule: StepSchedule,
    /// Gibbs sweeps at the starting point before the first gradient.
    pub warm_sweeps: usize,
    /// Standard deviation of the start-point jitter on the unconstrained scale.
    pub jitter: f64,
    pub seed: u64,
    pub thresholds: Thresholds,
    pub sgld: SgldOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            chains: 4,
            max_iters: 2000,
            checkpoint_every: 10,
            window: 20,
            k: 5,
            estimator: Estimator::Rb,
            schedule: StepSchedule::default(),
            warm_sweeps: 20,
            jitter: 0.5,
            seed: 0,
            thresholds: Thresholds::default(),
            sgld: SgldOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// `None` with a single chain.
    pub rhat: Option<RhatReport>,
    pub drift: Vec<DriftStat>,
    pub s_t: f64,
    /// `S_T` divided by the sum of products of gradient norms.
    pub s_t_normalized: f64,
    pub s_t_threshold: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    /// Natural scale.
    pub theta_map: Vec<f64>,
    pub traces: Vec<CheckpointTrace>,
    /// SGLD samples on the natural scale, one row per sample.
    pub posterior: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn posterior_mean(&self) -> Option<Vec<f64>> {
        if self.posterior.is_empty() {
            return None;
        }
        let n = self.posterior.len() as f64;
        Some((0..self.theta_map.len()).map(|j| self.posterior.iter().map(|r| r[j]).sum::<f64>() / n).collect())
    }

    /// Empirical `q`-quantile of each parameter's posterior samples.
    pub fn posterior_quantile(&self, q: f64) -> Option<Vec<f64>> {
        if self.posterior.is_empty() {
            return None;
        }
        Some(
            (0..self.theta_map.len())
                .map(|j| {
                    let mut col: Vec<f64> = self.posterior.iter().map(|r| r[j]).collect();
                    col.sort_by(f64::total_cmp);
                    quantile_sorted(&col, q)
                })
                .collect(),
        )
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// A failed fit, with the checkpoints recorded before the failure.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{error}")]
pub struct FitFailure {
    pub error: Error,
    pub traces: Vec<CheckpointTrace>,
}

impl From<Error> for FitFailure {
    fn from(error: Error) -> Self {
        FitFailure { error, traces: Vec::new() }
    }
}

/// Deterministic starting point: least-squares `β`, scales split from the
/// residual variance, zero skewness, unit mixing parameters, and the
/// model's default operator parameters.
pub fn moment_start(model: &Model, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != model.n_obs() {
        return Err(Error::Input(format!("expected {} observations, got {}", model.n_obs(), y.len())));
    }
    let x = model.x();
    let beta = if x.ncols() == 0 {
        Vec::new()
    } else {
        let yv = DVector::from_column_slice(y);
        x.clone()
            .svd(true, true)
            .solve(&yv, 1e-12)
            .map_err(|e| Error::Numerical(format!("least-squares start failed: {e}")))?
            .as_slice()
            .to_vec()
    };
    let xb = model.fixed_effects(&beta);
    let r: Vec<f64> = y.iter().zip(&xb).map(|(a, b)| a - b).collect();
    let m = r.iter().sum::<f64>() / r.len().max(1) as f64;
    let var = (r.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / r.len().max(1) as f64).max(1e-6);

    let op = model.operator();
    let dw: Vec<f64> = op.h().iter().map(|h| 1.0 / h).collect();
    let prec = op.k().weighted_gram(&dw);
    let unit_var = CholeskyFactor::new(&prec)?.selected_inverse().diagonal();
    let mean_var = unit_var.iter().sum::<f64>() / unit_var.len() as f64;

    let mut theta = model.theta0().to_vec();
    for (p, t) in model.layout().iter().zip(theta.iter_mut()) {
        *t = match p.role {
            Role::Beta(j) => beta[j],
            Role::SigmaEps => (0.5 * var).sqrt(),
            Role::Sigma => (0.5 * var / mean_var).sqrt(),
            Role::Mu | Role::MuEps => 0.0,
            Role::Nu | Role::NuEps => 1.0,
            Role::Kernel(_) => *t,
        };
    }
    Ok(theta)
}

/// Gradient estimator for one chain: a warm Gibbs chain and its own rng.
pub struct ChainGradient<'a> {
    model: &'a Model,
    y: &'a [f64],
    gibbs: GibbsChain,
    rng: ChaCha8Rng,
    k_cache: FactorCache,
    k: usize,
    estimator: Estimator,
}

impl<'a> ChainGradient<'a> {
    /// Starts the Gibbs chain at `theta` and runs `warm_sweeps` sweeps.
    pub fn new(
        model: &'a Model,
        y: &'a [f64],
        theta: &[f64],
        k: usize,
        estimator: Estimator,
        warm_sweeps: usize,
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Input("gradient sample count k must be at least 1".into()));
        }
        let ev = model.evaluate(theta)?;
        let mut gibbs = GibbsChain::new(&ev);
        for _ in 0..warm_sweeps {
            gibbs.sweep(&mut rng, &ev, y)?;
        }
        Ok(ChainGradient { model, y, gibbs, rng, k_cache: FactorCache::new(), k, estimator })
    }

    /// Gradient estimate of the negative log-posterior at unconstrained `u`,
    /// advancing the Gibbs chain by `k` sweeps.
    pub fn estimate(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        let theta = to_natural(u, &self.model.transforms())?;
        let ctx = GradientContext::new(self.model, &theta, self.y, &mut self.k_cache)?;
        let mut terms = Vec::with_capacity(self.k);
        for _ in 0..self.k {
            self.gibbs.sweep(&mut self.rng, &ctx.ev, self.y)?;
            let s = self.gibbs.state();
            terms.push(match self.estimator {
                Estimator::Mc => ctx.mc_term(s)?,
                Estimator::Rb => {
                    let (v_w, v_y) = (s.v_w.clone(), s.v_y.clone());
                    ctx.rb_term(&v_w, &v_y, self.gibbs.cache_mut())?
                }
            });
        }
        Ok(ctx.finish(&terms, self.estimator)?.g)
    }
}

impl GradientSource for ChainGradient<'_> {
    fn gradient(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        self.estimate(u)
    }
}

struct Worker<'a> {
    u: Vec<f64>,
    adam: Adam,
    grad: ChainGradient<'a>,
}

impl Worker<'_> {
    fn run_block(&mut self, start: usize, len: usize, schedule: &StepSchedule) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.u.len()];
        for t in start..start + len {
            let g = self.grad.estimate(&self.u)?;
            self.adam.step(&mut self.u, &g, schedule.at(t));
            if let Some(j) = self.u.iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    iteration: t,
                    reason: format!("parameter {} became non-finite", self.grad.model.layout()[j].name),
                });
            }
            for ((a, gi), p) in acc.iter_mut().zip(&g).zip(self.adam.preconditioner()) {
                *a += gi * p / len as f64;
            }
        }
        Ok(acc)
    }
}

/// Convergence diagnostics and the stopping verdict for a set of checkpoints.
pub fn evaluate_diagnostics(traces: &[CheckpointTrace], opts: &FitOptions, iterations: usize) -> Diagnostics {
    let window = opts.window.max(3);
    let enough = traces.len() >= 3;
    let chains = traces.first().map_or(0, |t| t.chains());
    let rhat = if chains >= 2 && traces.len() >= 2 { rhat(traces, window).ok() } else { None };
    let drift = if enough { drift_check(traces, window, &opts.thresholds).unwrap_or_default() } else { Vec::new() };
    let (s_t, s_t_normalized, products) = normalized_inner_stat(traces, window).unwrap_or((0.0, 0.0, 0));
    let s_t_threshold = if products > 0 { opts.thresholds.inner / (products as f64).sqrt() } else { 0.0 };
    let converged = traces.len() >= opts.window.max(3)
        && rhat.as_ref().is_none_or(|r| r.values.iter().all(|&v| v < opts.thresholds.rhat))
        && drift.iter().all(|d| d.pass)
        && s_t_normalized.abs() < s_t_threshold;
    Diagnostics { rhat, drift, s_t, s_t_normalized, s_t_threshold, converged, iterations }
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(chain as u64))
}

/// Runs `opts.chains` preconditioned stochastic-gradient optimizers from
/// jittered starts until the diagnostics pass or `max_iters` is reached.
pub fn map_fit(model: &Model, y: &[f64], opts: &FitOptions) -> std::result::Result<FitResult, FitFailure> {
    if opts.chains == 0 || opts.checkpoint_every == 0 {
        return Err(Error::Input("chains and checkpoint interval must be positive".into()).into());
    }
    let transforms = model.transforms();
    let start = to_unconstrained(&moment_start(model, y)?, &transforms)?;
    let jitter = Normal::new(0.0, opts.jitter).map_err(|e| Error::Input(format!("jitter: {e}")))?;
    let mut workers = (0..opts.chains)
        .map(|c| {
            let mut rng = chain_rng(opts.seed, c);
            let u: Vec<f64> = start.iter().map(|s| s + jitter.sample(&mut rng)).collect();
            let theta = to_natural(&u, &transforms)?;
            let grad = ChainGradient::new(model, y, &theta, opts.k, opts.estimator, opts.warm_sweeps, rng)?;
            Ok(Worker { adam: Adam::new(u.len()), u, grad })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut traces: Vec<CheckpointTrace> = Vec::new();
    let mut iter = 0;
    while iter < opts.max_iters {
        let len = opts.checkpoint_every.min(opts.max_iters - iter);
        let grads = workers.par_iter_mut().map(|w| w.run_block(iter, len, &opts.schedule)).collect::<Result<Vec<_>>>();
        let grads = match grads {
            Ok(g) => g,
            Err(error) => return Err(FitFailure { error, traces }),
        };
        iter += len;
        traces.push(CheckpointTrace {
            iteration: iter,
            theta: workers.iter().map(|w| w.u.clone()).collect(),
            grad: grads,
            step: opts.schedule.at(iter - 1),
        });
        if evaluate_diagnostics(&traces, opts, iter).converged {
            break;
        }
    }
    let diagnostics = evaluate_diagnostics(&traces, opts, iter);
    let p = start.len();
    let mean_u: Vec<f64> = (0..p).map(|j| workers.iter().map(|w| w.u[j]).sum::<f64>() / workers.len() as f64).collect();
    let theta_map = to_natural(&mean_u, &transforms)?;
    Ok(FitResult { names: model.param_names(), theta_map, traces, posterior: Vec::new(), diagnostics })
}

/// SGLD samples on the natural scale, started from `theta0`.
pub fn sgld_sample(model: &Model, y: &[f64], theta0: &[f64], opts: &SgldOptions) -> Result<Vec<Vec<f64>>> {
    let transforms = model.transforms();
    let u0 = to_unconstrained(theta0, &transforms)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let gibbs_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x05ee_d0f9_1bb5);
    let mut source = ChainGradient::new(model, y, theta0, opts.k, opts.estimator, opts.warm_sweeps, gibbs_rng)?;
    let schedule = SgldSchedule { step0: opts.step0, tau: opts.tau };
    let samples = sgld_run(&mut source, &u0, schedule, opts.n_samples, opts.thin, opts.burnin, &mut rng)?;
    samples.iter().map(|u| to_natural(u, &transforms)).collect()
}

/// MAP phase followed by the SGLD phase started at the MAP estimate.
pub fn fit(model: &Model, y: &[f64], opts: &FitOptions) -> std::result::Result<FitResult, FitFailure> {
    let mut result = map_fit(model, y, opts)?;
    if opts.sgld.n_samples > 0 {
        result.posterior = sgld_sample(model, y, &result.theta_map, &opts.sgld)
            .map_err(|error| FitFailure { error, traces: result.traces.clone() })?;
    }
    Ok(result)
}
