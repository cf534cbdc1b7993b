//! Exact conditional samplers for the latent field and the mixing
//! variables, and the Gibbs loop alternating between them.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cholesky::{CholeskyFactor, FactorCache};
use crate::distributions::{gig_sample, mixing_prior, GigParams, NoiseSpec, V_FLOOR};
use crate::error::{Error, Result};
use crate::model::{Evaluated, LatentState, Model};
use crate::sparse::SparseMatrix;

/// Stored post-burn-in Gibbs states.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsDraws {
    pub states: Vec<LatentState>,
    pub burnin: usize,
    pub thin: usize,
}

/// Factorized Gaussian conditional `W | V, Y ~ N(mean, Q⁻¹)`.
#[derive(Debug, Clone)]
pub struct ConditionalW {
    pub mean: Vec<f64>,
    pub precision: SparseMatrix,
    pub factor: CholeskyFactor,
}

impl ConditionalW {
    /// Builds the conditional at evaluated parameters `ev`.
    pub fn new(ev: &Evaluated<'_>, y: &[f64], v_w: &[f64], v_y: &[f64], cache: &mut FactorCache) -> Result<Self> {
        let model = ev.model;
        check_lengths(model, y, v_w, v_y)?;
        if let Some(v) = v_w.iter().chain(v_y).find(|&&v| !(v > 0.0)) {
            return Err(Error::Domain(format!("mixing variables must be positive, found {v}")));
        }
        let k = ev.op.k();
        let a = model.a();
        let (nw, ny) = (&ev.noise_w, &ev.noise_y);
        let s2 = nw.sigma * nw.sigma;
        let s2e = ny.sigma * ny.sigma;
        let dw: Vec<f64> = v_w.iter().map(|v| 1.0 / (s2 * v)).collect();
        let dy: Vec<f64> = v_y.iter().map(|v| 1.0 / (s2e * v)).collect();
        let precision = k.weighted_gram(&dw).add(&a.weighted_gram(&dy));

        let xb = ev.fixed_effects();
        let rw: Vec<f64> = (0..v_w.len()).map(|i| dw[i] * nw.mu * (v_w[i] - nw.h[i])).collect();
        let ry: Vec<f64> = (0..y.len()).map(|i| dy[i] * (y[i] - xb[i] - ny.mu * (v_y[i] - 1.0))).collect();
        let rhs: Vec<f64> = k.tr_mul_vec(&rw).into_iter().zip(a.tr_mul_vec(&ry)).map(|(p, q)| p + q).collect();
        let factor = cache.factor(&precision).map_err(|e| {
            Error::Numerical(format!(
                "conditional precision of W is not positive definite (check that K is invertible): {e}"
            ))
        })?;
        let mean = factor.solve(&rhs);
        Ok(ConditionalW { mean, precision, factor })
    }

    /// Exact draw from the conditional.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.factor.correlate(&z).into_iter().zip(&self.mean).map(|(u, m)| u + m).collect()
    }
}

fn check_lengths(model: &Model, y: &[f64], v_w: &[f64], v_y: &[f64]) -> Result<()> {
    if y.len() != model.n_obs() || v_y.len() != model.n_obs() {
        return Err(Error::Input(format!(
            "expected {} observations and measurement mixing variables, got {} and {}",
            model.n_obs(),
            y.len(),
            v_y.len()
        )));
    }
    if v_w.len() != model.n_latent() {
        return Err(Error::Input(format!("expected {} process mixing variables, got {}", model.n_latent(), v_w.len())));
    }
    Ok(())
}

/// Mean and precision of `W | V, Y`.
pub fn conditional_w_params(
    model: &Model,
    theta: &[f64],
    v_w: &[f64],
    v_y: &[f64],
    y: &[f64],
) -> Result<(Vec<f64>, SparseMatrix)> {
    let ev = model.evaluate(theta)?;
    let c = ConditionalW::new(&ev, y, v_w, v_y, &mut FactorCache::new())?;
    Ok((c.mean, c.precision))
}

/// One exact draw of `W | V, Y`.
pub fn sample_w<R: Rng + ?Sized>(
    rng: &mut R,
    model: &Model,
    theta: &[f64],
    v_w: &[f64],
    v_y: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    let ev = model.evaluate(theta)?;
    Ok(ConditionalW::new(&ev, y, v_w, v_y, &mut FactorCache::new())?.sample(rng))
}

/// Conditional law of `V_i` given its residual `r_i`, where the noise
/// coordinate is `ε_i = r_i`.
pub fn v_conditional(spec: &NoiseSpec, i: usize, r: f64) -> Result<GigParams> {
    let prior = mixing_prior(spec, i)?;
    let s2 = spec.sigma * spec.sigma;
    let shifted = r + spec.mu * spec.h[i];
    let g = GigParams { p: prior.p - 0.5, a: prior.a + spec.mu * spec.mu / s2, b: prior.b + shifted * shifted / s2 };
    g.validate().map_err(|e| Error::Numerical(format!("inadmissible conditional for V[{i}]: {e}")))?;
    Ok(g)
}

fn sample_block<R: Rng + ?Sized>(rng: &mut R, spec: &NoiseSpec, resid: &[f64]) -> Result<Vec<f64>> {
    if spec.family.is_gaussian() {
        return Ok(spec.h.clone());
    }
    resid.iter().enumerate().map(|(i, &r)| Ok(gig_sample(rng, &v_conditional(spec, i, r)?)?.max(V_FLOOR))).collect()
}

pub(crate) fn sample_v_at<R: Rng + ?Sized>(
    rng: &mut R,
    ev: &Evaluated<'_>,
    w: &[f64],
    y: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let kw = ev.op.k().mul_vec(w);
    let v_w = sample_block(rng, &ev.noise_w, &kw)?;
    let v_y = if ev.noise_y.family.is_gaussian() {
        ev.noise_y.h.clone()
    } else {
        let aw = ev.model.a().mul_vec(w);
        let xb = ev.fixed_effects();
        let r: Vec<f64> = (0..y.len()).map(|i| y[i] - aw[i] - xb[i]).collect();
        sample_block(rng, &ev.noise_y, &r)?
    };
    Ok((v_w, v_y))
}

/// Draws `(V_W, V_Y) | W, Y`. Gaussian blocks return their weights.
pub fn sample_v<R: Rng + ?Sized>(
    rng: &mut R,
    model: &Model,
    theta: &[f64],
    w: &[f64],
    y: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if w.len() != model.n_latent() || y.len() != model.n_obs() {
        return Err(Error::Input("W or Y has the wrong length".into()));
    }
    let ev = model.evaluate(theta)?;
    sample_v_at(rng, &ev, w, y)
}

/// A Gibbs chain that keeps its state and factorization pattern between
/// calls, so it can be warm-started as parameters change.
#[derive(Debug, Clone)]
pub struct GibbsChain {
    state: LatentState,
    cache: FactorCache,
}

impl GibbsChain {
    /// Starts at `V = h`, `W = 0`.
    pub fn new(ev: &Evaluated<'_>) -> Self {
        GibbsChain {
            state: LatentState {
                w: vec![0.0; ev.model.n_latent()],
                v_w: ev.noise_w.h.clone(),
                v_y: ev.noise_y.h.clone(),
            },
            cache: FactorCache::new(),
        }
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    pub fn cache_mut(&mut self) -> &mut FactorCache {
        &mut self.cache
    }

    /// One sweep: `W | V, Y`, then `V | W, Y`.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R, ev: &Evaluated<'_>, y: &[f64]) -> Result<()> {
        let cond = ConditionalW::new(ev, y, &self.state.v_w, &self.state.v_y, &mut self.cache)?;
        self.state.w = cond.sample(rng);
        let (v_w, v_y) = sample_v_at(rng, ev, &self.state.w, y)?;
        self.state.v_w = v_w;
        self.state.v_y = v_y;
        Ok(())
    }
}

/// Runs `iters` sweeps from `V = h` and keeps every `thin`-th state after
/// the first `burnin`.
pub fn gibbs_run<R: Rng + ?Sized>(
    rng: &mut R,
    model: &Model,
    theta: &[f64],
    y: &[f64],
    iters: usize,
    burnin: usize,
    thin: usize,
) -> Result<GibbsDraws> {
    if iters <= burnin {
        return Err(Error::Input(format!("iterations ({iters}) must exceed burn-in ({burnin})")));
    }
    if thin == 0 {
        return Err(Error::Input("thinning interval must be at least 1".into()));
    }
    let ev = model.evaluate(theta)?;
    let mut chain = GibbsChain::new(&ev);
    let mut states = Vec::with_capacity((iters - burnin).div_ceil(thin));
    for t in 0..iters {
        chain.sweep(rng, &ev, y)?;
        if t >= burnin && (t - burnin).is_multiple_of(thin) {
            states.push(chain.state.clone());
        }
    }
    Ok(GibbsDraws { states, burnin, thin })
}
