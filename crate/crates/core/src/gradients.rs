//! Augmented log-likelihood, its analytic gradient, and Monte Carlo and
//! Rao-Blackwellized estimators of the negative log-posterior gradient.

use crate::cholesky::{CholeskyFactor, FactorCache};
use crate::distributions::{gig_logpdf, mixing_prior, NoiseFamily, NoiseSpec};
use crate::error::{Error, Result};
use crate::gibbs::{ConditionalW, GibbsDraws};
use crate::inference::transforms::{chain_rule, to_unconstrained};
use crate::model::{prior_grad, Evaluated, LatentState, Model, Role};
use crate::sparse::SparseMatrix;
use crate::special::digamma;

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Plain average over Gibbs draws of `(W, V)`.
    Mc,
    /// Average over `V` draws of the exact conditional expectation over `W`.
    Rb,
}

/// Estimate of the gradient of the negative log-posterior on the
/// unconstrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub g: Vec<f64>,
    pub k: usize,
    pub estimator: Estimator,
}

/// Quantities of `K`, fixed for one parameter value: `log|det K|` and the
/// traces `tr(K⁻¹ ∂K/∂θ_i)`.
#[derive(Debug, Clone)]
pub struct OperatorTerms {
    pub log_det: f64,
    pub traces: Vec<f64>,
}

impl OperatorTerms {
    pub fn new(ev: &Evaluated<'_>, cache: &mut FactorCache) -> Result<Self> {
        let k = ev.op.k();
        let ktk = k.weighted_gram(&vec![1.0; k.nrows()]);
        let factor = cache.factor(&ktk).map_err(|e| Error::Numerical(format!("operator K is singular: {e}")))?;
        let log_det = 0.5 * factor.log_det();
        let traces = if ev.op.derivatives().is_empty() {
            Vec::new()
        } else {
            let s = factor.selected_inverse();
            let kt = k.transpose();
            ev.op.derivatives().iter().map(|dk| s.trace_product(&kt.matmul(dk))).collect()
        };
        Ok(OperatorTerms { log_det, traces })
    }
}

/// `tr(K⁻¹ ∂K/∂θ)` for the named operator parameter.
pub fn trace_term(model: &Model, theta: &[f64], name: &str) -> Result<f64> {
    let ev = model.evaluate(theta)?;
    let slot =
        ev.op.param_names().iter().position(|n| n == name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
    Ok(OperatorTerms::new(&ev, &mut FactorCache::new())?.traces[slot])
}

/// First and second moments of the residuals that enter the gradient. For
/// a realized `W` the second moments are squares of the first.
struct Moments {
    /// `E[e]`, `e = K W - μ (V - h)`.
    e: Vec<f64>,
    /// `E[e²]`.
    e2: Vec<f64>,
    /// `E[(∂K_j W) ⊙ e]` per operator parameter.
    dke: Vec<Vec<f64>>,
    /// `E[e_Y]`, `e_Y = Y - Xβ - A W - μ_ε (V_Y - 1)`.
    ey: Vec<f64>,
    /// `E[e_Y²]`.
    ey2: Vec<f64>,
}

fn residuals(ev: &Evaluated<'_>, y: &[f64], w: &[f64], v_w: &[f64], v_y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (nw, ny) = (&ev.noise_w, &ev.noise_y);
    let kw = ev.op.k().mul_vec(w);
    let e = (0..kw.len()).map(|i| kw[i] - nw.mu * (v_w[i] - nw.h[i])).collect();
    let aw = ev.model.a().mul_vec(w);
    let xb = ev.fixed_effects();
    let ey = (0..y.len()).map(|i| y[i] - xb[i] - aw[i] - ny.mu * (v_y[i] - 1.0)).collect();
    (e, ey)
}

fn realized_moments(ev: &Evaluated<'_>, y: &[f64], s: &LatentState) -> Moments {
    let (e, ey) = residuals(ev, y, &s.w, &s.v_w, &s.v_y);
    let dke =
        ev.op.derivatives().iter().map(|dk| dk.mul_vec(&s.w).iter().zip(&e).map(|(a, b)| a * b).collect()).collect();
    Moments { e2: e.iter().map(|x| x * x).collect(), ey2: ey.iter().map(|x| x * x).collect(), e, dke, ey }
}

fn conditional_moments(ev: &Evaluated<'_>, y: &[f64], v_w: &[f64], v_y: &[f64], cond: &ConditionalW) -> Moments {
    let (e, ey) = residuals(ev, y, &cond.mean, v_w, v_y);
    let s = cond.factor.selected_inverse();
    let k = ev.op.k();
    let var_kw = s.diag_sandwich(k, k);
    let var_aw = s.diag_sandwich(ev.model.a(), ev.model.a());
    let dke = ev
        .op
        .derivatives()
        .iter()
        .map(|dk| {
            let cov = s.diag_sandwich(dk, k);
            dk.mul_vec(&cond.mean).iter().zip(&e).zip(cov).map(|((a, b), c)| a * b + c).collect()
        })
        .collect();
    Moments {
        e2: e.iter().zip(var_kw).map(|(x, v)| x * x + v).collect(),
        ey2: ey.iter().zip(var_aw).map(|(x, v)| x * x + v).collect(),
        e,
        dke,
        ey,
    }
}

fn check_state(model: &Model, y: &[f64], s: &LatentState) -> Result<()> {
    if y.len() != model.n_obs() || s.v_y.len() != model.n_obs() {
        return Err(Error::Input(format!("expected {} observations", model.n_obs())));
    }
    if s.w.len() != model.n_latent() || s.v_w.len() != model.n_latent() {
        return Err(Error::Input(format!("expected a latent state of dimension {}", model.n_latent())));
    }
    check_v(&s.v_w, &s.v_y)
}

fn check_v(v_w: &[f64], v_y: &[f64]) -> Result<()> {
    match v_w.iter().chain(v_y).find(|&&v| !(v > 0.0 && v.is_finite())) {
        Some(v) => Err(Error::Domain(format!("mixing variables must be positive, found {v}"))),
        None => Ok(()),
    }
}

fn mixing_logpdf(spec: &NoiseSpec, v: &[f64]) -> Result<f64> {
    if spec.family.is_gaussian() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, &vi) in v.iter().enumerate() {
        total += gig_logpdf(vi, &mixing_prior(spec, i)?)?;
    }
    Ok(total)
}

/// `d/dν log π(V)` for one mixing block.
fn mixing_nu_grad(spec: &NoiseSpec, v: &[f64]) -> f64 {
    let nu = spec.nu;
    match spec.family {
        NoiseFamily::Gaussian => 0.0,
        NoiseFamily::Nig => {
            v.iter().zip(&spec.h).map(|(&v, &h)| -h * h / (2.0 * v) - v / 2.0 + 1.0 / (2.0 * nu) + h).sum()
        }
        NoiseFamily::Gal => {
            v.iter().zip(&spec.h).map(|(&v, &h)| h - v + h * v.ln() + h * nu.ln() - h * digamma(h * nu)).sum()
        }
    }
}

fn gaussian_block_loglik(sigma: f64, v: &[f64], e: &[f64]) -> f64 {
    let s2 = sigma * sigma;
    v.iter().zip(e).map(|(&v, &e)| -0.5 * (2.0 * PI * s2 * v).ln() - e * e / (2.0 * s2 * v)).sum()
}

fn loglik_at(ev: &Evaluated<'_>, y: &[f64], s: &LatentState, log_det: f64) -> Result<f64> {
    let (e, ey) = residuals(ev, y, &s.w, &s.v_w, &s.v_y);
    Ok(gaussian_block_loglik(ev.noise_y.sigma, &s.v_y, &ey)
        + gaussian_block_loglik(ev.noise_w.sigma, &s.v_w, &e)
        + log_det
        + mixing_logpdf(&ev.noise_w, &s.v_w)?
        + mixing_logpdf(&ev.noise_y, &s.v_y)?)
}

/// `log π(Y | W, V) + log π(W | V) + log π(V)` at natural-scale `θ`.
pub fn augmented_loglik(model: &Model, theta: &[f64], y: &[f64], state: &LatentState) -> Result<f64> {
    check_state(model, y, state)?;
    let ev = model.evaluate(theta)?;
    let terms = OperatorTerms::new(&ev, &mut FactorCache::new())?;
    loglik_at(&ev, y, state, terms.log_det)
}

fn grad_from_moments(ev: &Evaluated<'_>, v_w: &[f64], v_y: &[f64], m: &Moments, traces: &[f64]) -> Vec<f64> {
    let model = ev.model;
    let (nw, ny) = (&ev.noise_w, &ev.noise_y);
    let (s, se) = (nw.sigma, ny.sigma);
    let (s2, se2) = (s * s, se * se);
    let n = v_w.len() as f64;
    let nobs = v_y.len() as f64;
    let ey_over_v: Vec<f64> = m.ey.iter().zip(v_y).map(|(e, v)| e / v).collect();
    let x = model.x();
    model
        .layout()
        .iter()
        .map(|p| match p.role {
            Role::Beta(j) => x.column(j).iter().zip(&ey_over_v).map(|(a, b)| a * b).sum::<f64>() / se2,
            Role::SigmaEps => -nobs / se + m.ey2.iter().zip(v_y).map(|(e2, v)| e2 / v).sum::<f64>() / (se2 * se),
            Role::MuEps => ey_over_v.iter().zip(v_y).map(|(ev, v)| ev * (v - 1.0)).sum::<f64>() / se2,
            Role::NuEps => mixing_nu_grad(ny, v_y),
            Role::Mu => (0..v_w.len()).map(|i| m.e[i] * (v_w[i] - nw.h[i]) / v_w[i]).sum::<f64>() / s2,
            Role::Sigma => -n / s + m.e2.iter().zip(v_w).map(|(e2, v)| e2 / v).sum::<f64>() / (s2 * s),
            Role::Nu => mixing_nu_grad(nw, v_w),
            Role::Kernel(j) => traces[j] - m.dke[j].iter().zip(v_w).map(|(d, v)| d / v).sum::<f64>() / s2,
        })
        .collect()
}

/// Gradient of [`augmented_loglik`] with respect to the natural-scale `θ`.
pub fn augmented_grad_natural(model: &Model, theta: &[f64], y: &[f64], state: &LatentState) -> Result<Vec<f64>> {
    check_state(model, y, state)?;
    let ev = model.evaluate(theta)?;
    let terms = OperatorTerms::new(&ev, &mut FactorCache::new())?;
    let m = realized_moments(&ev, y, state);
    Ok(grad_from_moments(&ev, &state.v_w, &state.v_y, &m, &terms.traces))
}

/// Gradient of [`augmented_loglik`] on the unconstrained scale.
pub fn augmented_grad(model: &Model, theta: &[f64], y: &[f64], state: &LatentState) -> Result<Vec<f64>> {
    let g = augmented_grad_natural(model, theta, y, state)?;
    let u = to_unconstrained(theta, &model.transforms())?;
    Ok(chain_rule(&g, &u, &model.transforms()))
}

/// Evaluates gradient estimators for one parameter value, reusing the
/// operator factorization across draws.
pub struct GradientContext<'a> {
    pub ev: Evaluated<'a>,
    pub y: &'a [f64],
    pub terms: OperatorTerms,
    u: Vec<f64>,
}

impl<'a> GradientContext<'a> {
    pub fn new(model: &'a Model, theta: &[f64], y: &'a [f64], k_cache: &mut FactorCache) -> Result<Self> {
        if y.len() != model.n_obs() {
            return Err(Error::Input(format!("expected {} observations, got {}", model.n_obs(), y.len())));
        }
        let ev = model.evaluate(theta)?;
        let terms = OperatorTerms::new(&ev, k_cache)?;
        let u = to_unconstrained(theta, &model.transforms())?;
        Ok(GradientContext { ev, y, terms, u })
    }

    /// Unconstrained gradient of the augmented log-likelihood at a draw.
    pub fn mc_term(&self, s: &LatentState) -> Result<Vec<f64>> {
        check_state(self.ev.model, self.y, s)?;
        let m = realized_moments(&self.ev, self.y, s);
        let g = grad_from_moments(&self.ev, &s.v_w, &s.v_y, &m, &self.terms.traces);
        Ok(chain_rule(&g, &self.u, &self.ev.model.transforms()))
    }

    /// Unconstrained gradient averaged exactly over `W | V, Y`.
    pub fn rb_term(&self, v_w: &[f64], v_y: &[f64], cache: &mut FactorCache) -> Result<Vec<f64>> {
        check_v(v_w, v_y)?;
        let cond = ConditionalW::new(&self.ev, self.y, v_w, v_y, cache)?;
        let m = conditional_moments(&self.ev, self.y, v_w, v_y, &cond);
        let g = grad_from_moments(&self.ev, v_w, v_y, &m, &self.terms.traces);
        Ok(chain_rule(&g, &self.u, &self.ev.model.transforms()))
    }

    /// Negated mean of `terms` minus the prior gradient.
    pub fn finish(&self, terms: &[Vec<f64>], estimator: Estimator) -> Result<GradientReport> {
        if terms.is_empty() {
            return Err(Error::Input("gradient estimate needs at least one draw".into()));
        }
        let (_, gp) = prior_grad(self.ev.model.priors(), &self.u);
        let k = terms.len() as f64;
        let g = (0..gp.len()).map(|j| -terms.iter().map(|t| t[j]).sum::<f64>() / k - gp[j]).collect();
        Ok(GradientReport { g, k: terms.len(), estimator })
    }
}

/// Monte Carlo gradient over Gibbs draws of `(W, V)`.
pub fn mc_gradient(model: &Model, theta: &[f64], y: &[f64], draws: &GibbsDraws) -> Result<GradientReport> {
    let ctx = GradientContext::new(model, theta, y, &mut FactorCache::new())?;
    let terms = draws.states.iter().map(|s| ctx.mc_term(s)).collect::<Result<Vec<_>>>()?;
    ctx.finish(&terms, Estimator::Mc)
}

/// Rao-Blackwellized gradient over draws of the mixing variables. Only
/// `v_w` and `v_y` of each state are used.
pub fn rb_gradient(model: &Model, theta: &[f64], y: &[f64], v_draws: &[LatentState]) -> Result<GradientReport> {
    let ctx = GradientContext::new(model, theta, y, &mut FactorCache::new())?;
    let mut cache = FactorCache::new();
    let terms = v_draws.iter().map(|s| ctx.rb_term(&s.v_w, &s.v_y, &mut cache)).collect::<Result<Vec<_>>>()?;
    ctx.finish(&terms, Estimator::Rb)
}

/// Dense `tr(K⁻¹ ∂K)`, for checking the sparse computation on small models.
pub fn dense_trace_term(k: &SparseMatrix, dk: &SparseMatrix) -> Result<f64> {
    let kd = k.to_dense();
    let inv = kd.try_inverse().ok_or_else(|| Error::Numerical("operator K is singular".into()))?;
    Ok((inv * dk.to_dense()).trace())
}

/// `log|det K|` from a fresh factorization of `KᵀK`.
pub fn log_abs_det(k: &SparseMatrix) -> Result<f64> {
    let ktk = k.weighted_gram(&vec![1.0; k.nrows()]);
    Ok(0.5 * CholeskyFactor::new(&ktk)?.log_det())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh1D;
    use crate::model::{assemble_model, PriorSet};
    use crate::operators::{ar1_operator, matern_operator};
    use nalgebra::DMatrix;

    #[test]
    fn ar1_trace_matches_dense() {
        let op = ar1_operator(0.35, 20).unwrap();
        let m = assemble_model(
            SparseMatrix::identity(20),
            DMatrix::zeros(20, 0),
            vec![],
            op.clone(),
            NoiseSpec::gaussian(1.0, op.h().to_vec()),
            NoiseSpec::gaussian(1.0, vec![1.0; 20]),
            &PriorSet::defaults(),
        )
        .unwrap();
        let t = trace_term(&m, m.theta0(), "rho").unwrap();
        let d = dense_trace_term(op.k(), &op.derivatives()[0]).unwrap();
        assert!((t - d).abs() < 1e-10);
        assert!(trace_term(&m, m.theta0(), "kappa").is_err());
    }

    #[test]
    fn matern_trace_is_two_kappa_tr_kinv_c() {
        let mesh = Mesh1D::uniform(15, 0.0, 3.0).unwrap();
        let op = matern_operator(1.7, &mesh).unwrap();
        let c = crate::mesh::fem_matrices(&mesh, 0.0).c_lumped;
        let want = 2.0 * 1.7 * dense_trace_term(op.k(), &c).unwrap();
        let terms = {
            let m = assemble_model(
                SparseMatrix::identity(15),
                DMatrix::zeros(15, 0),
                vec![],
                op.clone(),
                NoiseSpec::gaussian(1.0, op.h().to_vec()),
                NoiseSpec::gaussian(1.0, vec![1.0; 15]),
                &PriorSet::defaults(),
            )
            .unwrap();
            trace_term(&m, m.theta0(), "kappa").unwrap()
        };
        assert!((terms - want).abs() < 1e-10 * want.abs().max(1.0));
    }

    #[test]
    fn gal_nu_gradient_at_unit_values() {
        let spec = NoiseSpec::gal(0.0, 1.0, 2.5, vec![1.0]);
        let g = mixing_nu_grad(&spec, &[1.0]);
        assert!((g - (2.5f64.ln() - digamma(2.5))).abs() < 1e-14);
    }

    #[test]
    fn nig_log_prior_at_weights() {
        let nu: f64 = 0.9;
        let spec = NoiseSpec::nig(0.0, 1.0, nu, vec![1.0; 4]);
        let got = mixing_logpdf(&spec, &[1.0; 4]).unwrap();
        assert!((got - 4.0 * 0.5 * (nu / (2.0 * PI)).ln()).abs() < 1e-12);
    }
}
