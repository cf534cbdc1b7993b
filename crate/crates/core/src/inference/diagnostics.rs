//! Multi-chain convergence diagnostics evaluated on checkpoint traces.

use crate::error::{Error, Result};

/// State of every chain at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointTrace {
    pub iteration: usize,
    /// Unconstrained `θ` per chain.
    pub theta: Vec<Vec<f64>>,
    /// Preconditioned gradient per chain, averaged since the previous
    /// checkpoint.
    pub grad: Vec<Vec<f64>>,
    pub step: f64,
}

impl CheckpointTrace {
    pub fn chains(&self) -> usize {
        self.theta.len()
    }
}

/// Thresholds of the all-pass stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub rhat: f64,
    /// Bound on `|slope|·span` relative to the level of the trace.
    pub slope: f64,
    /// Bound on the coefficient of variation of checkpoint means.
    pub rel_var: f64,
    /// Bound on the normalized inner-product statistic, in units of
    /// `1/√(number of products)`.
    pub inner: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { rhat: 1.05, slope: 0.01, rel_var: 0.02, inner: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhatReport {
    pub values: Vec<f64>,
    /// Set where every chain is constant over the window.
    pub degenerate: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftStat {
    pub rel_var: f64,
    pub slope: f64,
    pub pass: bool,
}

fn trailing(traces: &[CheckpointTrace], window: usize) -> &[CheckpointTrace] {
    &traces[traces.len().saturating_sub(window)..]
}

fn dims(traces: &[CheckpointTrace]) -> Result<(usize, usize)> {
    let first = traces.first().ok_or_else(|| Error::Input("no checkpoints".into()))?;
    let chains = first.chains();
    let p = first.theta.first().map_or(0, Vec::len);
    if traces.iter().any(|t| t.theta.len() != chains || t.theta.iter().any(|th| th.len() != p)) {
        return Err(Error::Input("checkpoints disagree on chain count or dimension".into()));
    }
    Ok((chains, p))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Potential scale reduction over the trailing `window` checkpoints,
/// `R̂ = √(1 + B/(n W))`, with `B/n` the variance of chain means and `W` the
/// mean within-chain variance. Identical chains give exactly 1.
pub fn rhat(traces: &[CheckpointTrace], window: usize) -> Result<RhatReport> {
    let tr = trailing(traces, window);
    let (chains, p) = dims(tr)?;
    if chains < 2 || tr.len() < 2 {
        return Err(Error::Input("R-hat needs at least 2 chains and 2 checkpoints".into()));
    }
    let mut values = Vec::with_capacity(p);
    let mut degenerate = Vec::with_capacity(p);
    for j in 0..p {
        let series: Vec<Vec<f64>> = (0..chains).map(|c| tr.iter().map(|t| t.theta[c][j]).collect()).collect();
        let means: Vec<f64> = series.iter().map(|s| mean(s)).collect();
        let w = mean(&series.iter().map(|s| sample_var(s)).collect::<Vec<_>>());
        let b_over_n = sample_var(&means);
        if w == 0.0 {
            values.push(if b_over_n == 0.0 { 1.0 } else { f64::INFINITY });
            degenerate.push(true);
        } else {
            values.push((1.0 + b_over_n / w).sqrt());
            degenerate.push(false);
        }
    }
    Ok(RhatReport { values, degenerate })
}

/// Least-squares slope against iteration and coefficient of variation of
/// the across-chain checkpoint means. Levels below 1 in magnitude are
/// measured on an absolute scale.
pub fn drift_check(traces: &[CheckpointTrace], window: usize, thresholds: &Thresholds) -> Result<Vec<DriftStat>> {
    let tr = trailing(traces, window);
    let (chains, p) = dims(tr)?;
    if tr.len() < 3 {
        return Err(Error::Input("drift check needs at least 3 checkpoints".into()));
    }
    let x: Vec<f64> = tr.iter().map(|t| t.iteration as f64).collect();
    let xm = mean(&x);
    let sxx: f64 = x.iter().map(|v| (v - xm) * (v - xm)).sum();
    let span = x[x.len() - 1] - x[0];
    Ok((0..p)
        .map(|j| {
            let c: Vec<f64> = tr.iter().map(|t| t.theta.iter().map(|th| th[j]).sum::<f64>() / chains as f64).collect();
            let cm = mean(&c);
            let slope =
                if sxx > 0.0 { x.iter().zip(&c).map(|(a, b)| (a - xm) * (b - cm)).sum::<f64>() / sxx } else { 0.0 };
            let scale = cm.abs().max(1.0);
            let rel_var = sample_var(&c).sqrt() / scale;
            let pass = slope.abs() * span < thresholds.slope * scale && rel_var < thresholds.rel_var;
            DriftStat { rel_var, slope, pass }
        })
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `S_T = Σ_t g_tᵀ g_{t+1}` over a gradient history.
pub fn grad_inner_stat(grads: &[Vec<f64>]) -> Result<f64> {
    if grads.len() < 2 {
        return Err(Error::Input("inner-product statistic needs at least 2 gradients".into()));
    }
    Ok(grads.windows(2).map(|w| dot(&w[0], &w[1])).sum())
}

/// `S_T` pooled over chains and divided by `Σ ‖g_t‖ ‖g_{t+1}‖`, together
/// with the number of products. The ratio lies in `[-1, 1]` and is near 0
/// once successive gradients are uncorrelated.
pub fn normalized_inner_stat(traces: &[CheckpointTrace], window: usize) -> Result<(f64, f64, usize)> {
    let tr = trailing(traces, window);
    let (chains, _) = dims(tr)?;
    if tr.len() < 2 {
        return Err(Error::Input("inner-product statistic needs at least 2 checkpoints".into()));
    }
    let (mut s, mut norm) = (0.0, 0.0);
    for c in 0..chains {
        let g: Vec<Vec<f64>> = tr.iter().map(|t| t.grad[c].clone()).collect();
        s += grad_inner_stat(&g)?;
        norm += g.windows(2).map(|w| dot(&w[0], &w[0]).sqrt() * dot(&w[1], &w[1]).sqrt()).sum::<f64>();
    }
    let ratio = if norm > 0.0 { s / norm } else { 0.0 };
    Ok((s, ratio, chains * (tr.len() - 1)))
}
