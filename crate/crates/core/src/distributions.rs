//! Generalized inverse Gaussian (GIG) mixing laws and the normal
//! mean-variance mixture noise built on them.
//!
//! `GIG(p, a, b)` has density proportional to `x^{p-1} exp(-(a x + b / x) / 2)`.
//! The normal-inverse Gaussian (NIG) and generalized asymmetric Laplace (GAL)
//! families use mixing laws centred so that `E[V_i] = h_i`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::special::{bessel_k_ratio, ln_gamma, log_bessel_k};

/// Floor applied to mixing variables before they enter `1 / V` terms.
pub const V_FLOOR: f64 = 1e-12;

/// Parameters `(p, a, b)` of a GIG distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigParams {
    pub p: f64,
    pub a: f64,
    pub b: f64,
}

impl GigParams {
    /// Validated constructor.
    pub fn new(p: f64, a: f64, b: f64) -> Result<Self> {
        let g = GigParams { p, a, b };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let GigParams { p, a, b } = *self;
        let ok = p.is_finite()
            && a.is_finite()
            && b.is_finite()
            && a >= 0.0
            && b >= 0.0
            && match (a > 0.0, b > 0.0) {
                (true, true) => true,
                (true, false) => p > 0.0,
                (false, true) => p < 0.0,
                (false, false) => false,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("GIG parameters (p={p}, a={a}, b={b}) are not admissible")))
        }
    }

    /// Log of the constant `C` with density `C x^{p-1} exp(-(a x + b/x)/2)`.
    pub fn log_normalizer(&self) -> Result<f64> {
        self.validate()?;
        let GigParams { p, a, b } = *self;
        Ok(if b == 0.0 {
            p * (0.5 * a).ln() - ln_gamma(p)
        } else if a == 0.0 {
            -p * (0.5 * b).ln() - ln_gamma(-p)
        } else {
            0.5 * p * (a / b).ln() - std::f64::consts::LN_2 - log_bessel_k(p, (a * b).sqrt())
        })
    }
}

/// Log density of `GIG(p, a, b)` at `x > 0`.
pub fn gig_logpdf(x: f64, g: &GigParams) -> Result<f64> {
    let c = g.log_normalizer()?;
    if !(x > 0.0) {
        return Err(Error::Domain(format!("GIG density needs x > 0, got {x}")));
    }
    Ok(c + (g.p - 1.0) * x.ln() - 0.5 * (g.a * x + g.b / x))
}

/// `(E[V], E[1/V])` for `V ~ GIG(p, a, b)`.
pub fn gig_moments(g: &GigParams) -> Result<(f64, f64)> {
    g.validate()?;
    let GigParams { p, a, b } = *g;
    if b == 0.0 {
        if p <= 1.0 {
            return Err(Error::Domain(format!("E[1/V] does not exist for a gamma mixing law with shape {p} <= 1")));
        }
        return Ok((2.0 * p / a, a / (2.0 * (p - 1.0))));
    }
    if a == 0.0 {
        if p >= -1.0 {
            return Err(Error::Domain(format!(
                "E[V] does not exist for an inverse-gamma mixing law with shape {} <= 1",
                -p
            )));
        }
        return Ok((0.5 * b / (-p - 1.0), -2.0 * p / b));
    }
    let omega = (a * b).sqrt();
    let eta = (b / a).sqrt();
    let mean = eta * bessel_k_ratio(p, omega);
    let inv_mean = 1.0 / (eta * bessel_k_ratio(p - 1.0, omega));
    Ok((mean, inv_mean))
}

/// Mode of the standardized density `x^{λ-1} exp(-ω (x + 1/x) / 2)`.
fn standard_mode(lambda: f64, omega: f64) -> f64 {
    if lambda >= 1.0 {
        (((lambda - 1.0).powi(2) + omega * omega).sqrt() + (lambda - 1.0)) / omega
    } else {
        omega / (((1.0 - lambda).powi(2) + omega * omega).sqrt() + (1.0 - lambda))
    }
}

fn unif<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Open interval (0, 1).
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Ratio-of-uniforms without mode shift.
fn rou_noshift<R: Rng + ?Sized>(rng: &mut R, lambda: f64, omega: f64) -> f64 {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = standard_mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);
    let ym = ((lambda + 1.0) + ((lambda + 1.0).powi(2) + omega * omega).sqrt()) / omega;
    let um = (0.5 * (lambda + 1.0) * ym.ln() - s * (ym + 1.0 / ym) - nc).exp();
    loop {
        let u = um * unif(rng);
        let v = unif(rng);
        let x = u / v;
        if v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            return x;
        }
    }
}

/// Ratio-of-uniforms with the mode shifted to the origin.
fn rou_shift<R: Rng + ?Sized>(rng: &mut R, lambda: f64, omega: f64) -> f64 {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = standard_mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);
    // Extremes of (x - xm) sqrt(f(x)) solve x³ + a x² + b x + c = 0.
    let a = -(2.0 * (lambda + 1.0) / omega + xm);
    let b = 2.0 * (lambda - 1.0) * xm / omega - 1.0;
    let c = xm;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let fi = (-q / (2.0 * (-(p * p * p) / 27.0).sqrt())).clamp(-1.0, 1.0).acos();
    let fak = 2.0 * (-p / 3.0).sqrt();
    let y1 = fak * (fi / 3.0).cos() - a / 3.0;
    let y2 = fak * (fi / 3.0 + 4.0 / 3.0 * std::f64::consts::PI).cos() - a / 3.0;
    let uplus = (y1 - xm) * (t * y1.ln() - s * (y1 + 1.0 / y1) - nc).exp();
    let uminus = (y2 - xm) * (t * y2.ln() - s * (y2 + 1.0 / y2) - nc).exp();
    loop {
        let u = uminus + unif(rng) * (uplus - uminus);
        let v = unif(rng);
        let x = u / v + xm;
        if x > 0.0 && v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            return x;
        }
    }
}

/// Rejection from a three-piece envelope for `λ < 1` and small `ω`.
fn small_omega<R: Rng + ?Sized>(rng: &mut R, lambda: f64, omega: f64) -> f64 {
    let xm = standard_mode(lambda, omega);
    let x0 = omega / (1.0 - lambda);
    let k0 = ((lambda - 1.0) * xm.ln() - 0.5 * omega * (xm + 1.0 / xm)).exp();
    let a0 = k0 * x0;
    let (k1, a1, k2, a2);
    if x0 >= 2.0 / omega {
        k1 = 0.0;
        a1 = 0.0;
        k2 = x0.powf(lambda - 1.0);
        a2 = k2 * 2.0 * (-omega * x0 / 2.0).exp() / omega;
    } else {
        k1 = (-omega).exp();
        a1 = if lambda == 0.0 {
            k1 * (2.0 / (omega * omega)).ln()
        } else {
            k1 / lambda * ((2.0 / omega).powf(lambda) - x0.powf(lambda))
        };
        k2 = (2.0 / omega).powf(lambda - 1.0);
        a2 = k2 * 2.0 * (-1.0f64).exp() / omega;
    }
    let total = a0 + a1 + a2;
    loop {
        let mut v = total * unif(rng);
        let (x, hx);
        if v <= a0 {
            x = x0 * v / a0;
            hx = k0;
        } else {
            v -= a0;
            if v <= a1 {
                if lambda == 0.0 {
                    x = omega * (omega.exp() * v).exp();
                    hx = k1 / x;
                } else {
                    x = (x0.powf(lambda) + lambda / k1 * v).powf(1.0 / lambda);
                    hx = k1 * x.powf(lambda - 1.0);
                }
            } else {
                v -= a1;
                let a = x0.max(2.0 / omega);
                x = -2.0 / omega * ((-omega / 2.0 * a).exp() - omega / (2.0 * k2) * v).ln();
                hx = k2 * (-omega / 2.0 * x).exp();
            }
        }
        let u = unif(rng) * hx;
        if x > 0.0 && u.ln() <= (lambda - 1.0) * x.ln() - omega / 2.0 * (x + 1.0 / x) {
            return x;
        }
    }
}

/// Draws from `GIG(p, a, b)`.
///
/// Uses the gamma and inverse-gamma laws on the boundary of the parameter
/// space and the Hörmann-Leydold rejection schemes in the interior.
pub fn gig_sample<R: Rng + ?Sized>(rng: &mut R, g: &GigParams) -> Result<f64> {
    g.validate()?;
    let GigParams { p, a, b } = *g;
    if b == 0.0 {
        let d = Gamma::new(p, 2.0 / a).map_err(|e| Error::Domain(e.to_string()))?;
        return Ok(d.sample(rng));
    }
    if a == 0.0 {
        let d = Gamma::new(-p, 2.0 / b).map_err(|e| Error::Domain(e.to_string()))?;
        return Ok(1.0 / d.sample(rng));
    }
    let omega = (a * b).sqrt();
    let alpha = (b / a).sqrt();
    let lambda = p.abs();
    let y = if lambda > 2.0 || omega > 3.0 {
        rou_shift(rng, lambda, omega)
    } else if lambda >= 1.0 - 2.25 * omega * omega || omega > 0.2 {
        rou_noshift(rng, lambda, omega)
    } else {
        small_omega(rng, lambda, omega)
    };
    Ok(if p < 0.0 { alpha / y } else { alpha * y })
}

/// Noise families supported for both the process and the measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseFamily {
    Gaussian,
    Nig,
    Gal,
}

impl NoiseFamily {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Nig => "nig",
            NoiseFamily::Gal => "gal",
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, NoiseFamily::Gaussian)
    }
}

impl std::str::FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(NoiseFamily::Gaussian),
            "nig" => Ok(NoiseFamily::Nig),
            "gal" => Ok(NoiseFamily::Gal),
            other => Err(Error::Input(format!("unknown noise family `{other}`"))),
        }
    }
}

/// One block of mean-variance mixture noise
/// `ε_i = μ (V_i - h_i) + σ sqrt(V_i) Z_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub mu: f64,
    pub sigma: f64,
    pub nu: f64,
    pub h: Vec<f64>,
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64, h: Vec<f64>) -> Self {
        NoiseSpec { family: NoiseFamily::Gaussian, mu: 0.0, sigma, nu: f64::NAN, h }
    }

    pub fn nig(mu: f64, sigma: f64, nu: f64, h: Vec<f64>) -> Self {
        NoiseSpec { family: NoiseFamily::Nig, mu, sigma, nu, h }
    }

    pub fn gal(mu: f64, sigma: f64, nu: f64, h: Vec<f64>) -> Self {
        NoiseSpec { family: NoiseFamily::Gal, mu, sigma, nu, h }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Domain(format!("noise scale must be positive, got {}", self.sigma)));
        }
        if let Some(bad) = self.h.iter().find(|&&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::Domain(format!("mesh weights must be positive, found {bad}")));
        }
        if !self.family.is_gaussian() {
            if !(self.nu > 0.0 && self.nu.is_finite()) {
                return Err(Error::Domain(format!("mixing parameter must be positive, got {}", self.nu)));
            }
            if !self.mu.is_finite() {
                return Err(Error::Domain("skewness must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Mixing law of `V_i`, centred so that `E[V_i] = h_i`.
pub fn mixing_prior(spec: &NoiseSpec, i: usize) -> Result<GigParams> {
    let h = *spec
        .h
        .get(i)
        .ok_or_else(|| Error::Input(format!("index {i} outside noise block of length {}", spec.len())))?;
    let nu = spec.nu;
    let g = match spec.family {
        NoiseFamily::Gaussian => {
            return Err(Error::UnsupportedFamily("mixing prior (gaussian noise has no mixing variable)".into()))
        }
        NoiseFamily::Nig => GigParams { p: -0.5, a: nu, b: nu * h * h },
        NoiseFamily::Gal => GigParams { p: h * nu, a: 2.0 * nu, b: 0.0 },
    };
    g.validate()?;
    Ok(g)
}

/// Draws `(ε, V)` for one noise block. Gaussian blocks return `V = h`.
pub fn gh_noise_sample<R: Rng + ?Sized>(rng: &mut R, spec: &NoiseSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    let n = spec.len();
    let mut eps = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        let vi = if spec.family.is_gaussian() { spec.h[i] } else { gig_sample(rng, &mixing_prior(spec, i)?)? };
        let z: f64 = StandardNormal.sample(rng);
        let mu = if spec.family.is_gaussian() { 0.0 } else { spec.mu };
        eps.push(mu * (vi - spec.h[i]) + spec.sigma * vi.sqrt() * z);
        v.push(vi);
    }
    Ok((eps, v))
}

/// Marginal log density of a single noise coordinate with weight `h`.
pub fn noise_logpdf(spec: &NoiseSpec, h: f64, x: f64) -> Result<f64> {
    let s2 = spec.sigma * spec.sigma;
    if spec.family.is_gaussian() {
        return Ok(-0.5 * (2.0 * std::f64::consts::PI * s2 * h).ln() - 0.5 * x * x / (s2 * h));
    }
    let single = NoiseSpec { h: vec![h], ..spec.clone() };
    single.validate()?;
    let g = mixing_prior(&single, 0)?;
    let mu = spec.mu;
    let xs = x + mu * h;
    let big_a = g.a + mu * mu / s2;
    let big_b = g.b + xs * xs / s2;
    let q = g.p - 0.5;
    let mixture = if big_b > 0.0 {
        std::f64::consts::LN_2 + log_bessel_k(q, (big_a * big_b).sqrt()) + 0.5 * q * (big_b / big_a).ln()
    } else if q > 0.0 {
        ln_gamma(q) + q * (2.0 / big_a).ln()
    } else {
        f64::INFINITY
    };
    Ok(g.log_normalizer()? - 0.5 * (2.0 * std::f64::consts::PI * s2).ln() + mu * xs / s2 + mixture)
}

/// Kullback-Leibler divergence `KL(truth || estimate)` between the marginal
/// noise densities at weight `h`, by quadrature.
pub fn noise_kld(truth: &NoiseSpec, estimate: &NoiseSpec, h: f64) -> Result<f64> {
    let mut failure = None;
    let value = quadrature::integrate_real_line(
        |x| {
            let lp = noise_logpdf(truth, h, x);
            let lq = noise_logpdf(estimate, h, x);
            match (lp, lq) {
                (Ok(lp), Ok(lq)) => {
                    let p = lp.exp();
                    if p == 0.0 {
                        0.0
                    } else {
                        p * (lp - lq)
                    }
                }
                (Err(e), _) | (_, Err(e)) => {
                    failure = Some(e);
                    0.0
                }
            }
        },
        0.0,
        1e-12,
        1e-10,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(value.max(0.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn admissibility_boundaries() {
        assert!(GigParams::new(1.0, 1.0, 0.0).is_ok());
        assert!(GigParams::new(-1.0, 1.0, 0.0).is_err());
        assert!(GigParams::new(-1.0, 0.0, 1.0).is_ok());
        assert!(GigParams::new(1.0, 0.0, 1.0).is_err());
        assert!(GigParams::new(0.0, 0.0, 0.0).is_err());
        assert!(GigParams::new(0.3, -1.0, 1.0).is_err());
    }

    #[test]
    fn inverse_gaussian_and_gamma_special_cases() {
        // IG(mean m, shape λ) = GIG(-1/2, λ/m², λ); here m = 1, λ = 2.
        let g = GigParams::new(-0.5, 2.0, 2.0).unwrap();
        let ig = 0.5 * (2.0 / (2.0 * std::f64::consts::PI)).ln();
        assert!((gig_logpdf(1.0, &g).unwrap() - ig).abs() < 1e-13);
        let g = GigParams::new(3.0, 2.0, 0.0).unwrap();
        let x: f64 = 1.7;
        let gamma = 2.0 * x.ln() - x - ln_gamma(3.0);
        assert!((gig_logpdf(x, &g).unwrap() - gamma).abs() < 1e-13);
    }

    #[test]
    fn mixing_priors_are_centred() {
        let nig = NoiseSpec::nig(0.0, 1.0, 0.4, vec![1.0, 0.3, 2.5]);
        assert_eq!(mixing_prior(&nig, 0).unwrap(), GigParams { p: -0.5, a: 0.4, b: 0.4 });
        let gal = NoiseSpec::gal(0.0, 1.0, 2.0, vec![0.5]);
        assert_eq!(mixing_prior(&gal, 0).unwrap(), GigParams { p: 1.0, a: 4.0, b: 0.0 });
        for i in 0..3 {
            let (m, _) = gig_moments(&mixing_prior(&nig, i).unwrap()).unwrap();
            assert!((m - nig.h[i]).abs() < 1e-13 * nig.h[i]);
        }
        let gauss = NoiseSpec::gaussian(1.0, vec![1.0]);
        assert!(matches!(mixing_prior(&gauss, 0), Err(Error::UnsupportedFamily(_))));
    }

    #[test]
    fn gaussian_block_keeps_v_at_h() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = NoiseSpec::gaussian(1.0, vec![1.0; 5]);
        let (_, v) = gh_noise_sample(&mut rng, &spec).unwrap();
        assert_eq!(v, vec![1.0; 5]);
    }

    #[test]
    fn noise_density_integrates_to_one() {
        for spec in [
            NoiseSpec::nig(3.0, 2.0, 0.4, vec![1.0]),
            NoiseSpec::nig(-1.0, 0.5, 3.0, vec![1.0]),
            NoiseSpec::gal(1.0, 1.0, 2.0, vec![1.0]),
            NoiseSpec::gaussian(1.3, vec![1.0]),
        ] {
            let total =
                quadrature::integrate_real_line(|x| noise_logpdf(&spec, 0.7, x).unwrap().exp(), 0.0, 1e-12, 1e-11)
                    .unwrap();
            assert!((total - 1.0).abs() < 1e-8, "{spec:?}: {total}");
        }
    }

    #[test]
    fn kld_is_zero_for_identical_and_positive_otherwise() {
        let a = NoiseSpec::nig(3.0, 2.0, 0.4, vec![1.0]);
        assert!(noise_kld(&a, &a, 1.0).unwrap() < 1e-10);
        let b = NoiseSpec::nig(3.0, 1.7, 0.36, vec![1.0]);
        let d = noise_kld(&a, &b, 1.0).unwrap();
        assert!(d > 0.0 && d < 0.1);
    }
}
