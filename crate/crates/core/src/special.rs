//! Modified Bessel functions of the second kind in logarithmic form, plus
//! the gamma-family helpers used by the mixing densities.
//!
//! `K_ν(x)` overflows or underflows for moderate arguments, so everything is
//! computed as `log K_ν(x)` and as ratios `K_{ν+1}(x) / K_ν(x)`. The
//! fractional order `|μ| ≤ 1/2` is evaluated with Temme's series for
//! `x < 2` and Steed's continued fraction otherwise; integer steps follow
//! the forward recurrence on ratios.

use std::f64::consts::PI;

pub use statrs::function::gamma::{digamma, ln_gamma};

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 100_000;
const EULER: f64 = 0.577_215_664_901_532_9;

const C1: [f64; 7] = [
    -1.142022680371168e0,
    6.5165112670737e-3,
    3.087090173086e-4,
    -3.4706269649e-6,
    6.9437664e-9,
    3.67795e-11,
    -1.356e-13,
];
const C2: [f64; 8] = [
    1.843740587300905e0,
    -7.68528408447867e-2,
    1.2719271366546e-3,
    -4.9717367042e-6,
    -3.31261198e-8,
    2.423096e-10,
    -1.702e-13,
    -1.49e-15,
];

fn chebev(c: &[f64], y: f64) -> f64 {
    let (mut d, mut dd) = (0.0, 0.0);
    let y2 = 2.0 * y;
    for &cj in c[1..].iter().rev() {
        let sv = d;
        d = y2 * d - dd + cj;
        dd = sv;
    }
    y * d - dd + 0.5 * c[0]
}

/// `(log K_μ(x), K_{μ+1}(x) / K_μ(x))` for `|μ| ≤ 1/2`, `x > 0`.
fn fractional_order(mu: f64, x: f64) -> (f64, f64) {
    if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let xx = 8.0 * mu * mu - 1.0;
        let gam1 = chebev(&C1, xx);
        let gam2 = chebev(&C2, xx);
        let gampl = gam2 - mu * gam1;
        let gammi = gam2 + mu * gam1;
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        let mu2 = mu * mu;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        (sum.ln(), sum1 * 2.0 / x / sum)
    } else {
        let mu2 = mu * mu;
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        let log_k = 0.5 * (PI / (2.0 * x)).ln() - x - s.ln();
        (log_k, (mu + x + 0.5 - h) / x)
    }
}

/// Leading behaviour of `log K_ν(x)` as `x → 0`, for arguments where the
/// series would overflow.
fn small_argument(nu: f64, x: f64) -> f64 {
    if nu == 0.0 {
        return (-(0.5 * x).ln() - EULER).ln();
    }
    // K_ν(x) ≈ ½Γ(ν)(x/2)^{-ν} [1 + Γ(-ν)/Γ(ν) (x/2)^{2ν}]; the correction
    // is far below double precision once x < 1e-150 and ν ≥ 1/2.
    (0.5f64).ln() + ln_gamma(nu) - nu * (0.5 * x).ln()
}

/// `(log K_ν(x), K_{ν+1}(x) / K_ν(x))` for `ν ≥ 0`.
fn order_pair(nu: f64, x: f64) -> (f64, f64) {
    debug_assert!(nu >= 0.0 && x > 0.0);
    let nl = (nu + 0.5).floor();
    let mu = nu - nl;
    let n = nl as usize;
    if x < 1e-150 && (nu >= 0.5 || nu == 0.0) {
        let log_k = small_argument(nu, x);
        let ratio = (small_argument(nu + 1.0, x) - log_k).exp();
        return (log_k, ratio);
    }
    let (mut log_k, mut r) = fractional_order(mu, x);
    for k in 1..=n {
        log_k += r.ln();
        r = 2.0 * (mu + k as f64) / x + 1.0 / r;
    }
    (log_k, r)
}

/// Natural logarithm of the modified Bessel function `K_ν(x)` for real order
/// and `x > 0`.
pub fn log_bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "log_bessel_k requires x > 0, got {x}");
    order_pair(nu.abs(), x).0
}

/// Ratio `K_{ν+1}(x) / K_ν(x)` for real order and `x > 0`.
pub fn bessel_k_ratio(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k_ratio requires x > 0, got {x}");
    if nu >= 0.0 {
        order_pair(nu, x).1
    } else if nu <= -1.0 {
        // K_{ν+1}/K_ν = K_{|ν|-1}/K_{|ν|}.
        1.0 / order_pair(-nu - 1.0, x).1
    } else {
        (log_bessel_k(nu + 1.0, x) - log_bessel_k(nu, x)).exp()
    }
}

/// `log K_ν(x) + x`, the exponentially scaled form.
pub fn log_bessel_k_scaled(nu: f64, x: f64) -> f64 {
    log_bessel_k(nu, x) + x
}
