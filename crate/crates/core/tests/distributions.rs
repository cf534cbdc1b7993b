use llngm::distributions::{gh_noise_sample, gig_logpdf, gig_moments, gig_sample, GigParams, NoiseSpec};
use llngm::quadrature::{integrate, integrate_positive};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn draws(g: &GigParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| gig_sample(&mut rng, g).unwrap()).collect()
}

/// Kolmogorov-Smirnov distance against the CDF obtained by integrating the
/// density between consecutive order statistics.
fn ks_distance(g: &GigParams, mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let pdf = |x: f64| if x <= 0.0 { 0.0 } else { gig_logpdf(x, g).unwrap().exp() };
    let n = xs.len() as f64;
    let mut cdf = integrate(pdf, 0.0, xs[0], 1e-13, 1e-11).unwrap();
    let mut d: f64 = 0.0;
    for i in 0..xs.len() {
        if i > 0 {
            cdf += integrate(pdf, xs[i - 1], xs[i], 1e-13, 1e-11).unwrap();
        }
        d = d.max((cdf - i as f64 / n).abs()).max(((i + 1) as f64 / n - cdf).abs());
    }
    d
}

#[test]
fn gig_sampler_matches_distribution() {
    let cases = [
        GigParams::new(-0.5, 2.0, 0.5).unwrap(),
        GigParams::new(0.3, 0.7, 1.9).unwrap(),
        GigParams::new(2.5, 4.0, 0.0).unwrap(),
        GigParams::new(0.2, 1.0, 0.0).unwrap(),
        GigParams::new(-1.5, 0.0, 3.0).unwrap(),
        GigParams::new(-1.0, 500.0, 0.002).unwrap(),
    ];
    let n = 20_000;
    for (s, g) in cases.iter().enumerate() {
        let xs = draws(g, n, s as u64);
        // 1% critical value of the KS statistic.
        let d = ks_distance(g, xs.clone());
        assert!(d < 1.63 / (n as f64).sqrt(), "{g:?}: KS distance {d}");
        if let Ok((mean, inv_mean)) = gig_moments(g) {
            let inv: Vec<f64> = xs.iter().map(|x| 1.0 / x).collect();
            for (sample, want) in [(&xs, mean), (&inv, inv_mean)] {
                let m = sample.iter().sum::<f64>() / n as f64;
                let se = (sample.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n * n) as f64).sqrt();
                assert!((m - want).abs() < 4.0 * se, "{g:?}: {m} vs {want}");
            }
        }
    }
}

#[test]
fn noise_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = vec![0.7; 40_000];
    for spec in [NoiseSpec::nig(1.5, 0.8, 2.0, h.clone()), NoiseSpec::gal(-1.0, 1.2, 1.5, h.clone())] {
        let (eps, v) = gh_noise_sample(&mut rng, &spec).unwrap();
        let n = eps.len() as f64;
        let mean = eps.iter().sum::<f64>() / n;
        let var = eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let vm = v.iter().sum::<f64>() / n;
        let vv = v.iter().map(|x| (x - vm).powi(2)).sum::<f64>() / (n - 1.0);
        // E[ε] = 0 because E[V] = h; Var(ε) = σ² h + μ² Var(V).
        assert!(mean.abs() < 4.0 * (var / n).sqrt(), "{spec:?}: mean {mean}");
        let want = spec.sigma.powi(2) * 0.7 + spec.mu.powi(2) * vv;
        assert!((var / want - 1.0).abs() < 0.05, "{spec:?}: var {var} vs {want}");
        assert!((vm / 0.7 - 1.0).abs() < 0.03);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gig_density_is_normalized(p in -3.0..3.0f64, a in 0.05..10.0f64, b in 0.05..10.0f64) {
        let g = GigParams::new(p, a, b).unwrap();
        let (mean, _) = gig_moments(&g).unwrap();
        let total = integrate_positive(|x| if x <= 0.0 { 0.0 } else { gig_logpdf(x, &g).unwrap().exp() }, mean, 1e-12, 1e-10).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-7, "total {}", total);
    }

    #[test]
    fn gig_draws_are_positive(p in -3.0..3.0f64, a in 0.01..20.0f64, b in 0.01..20.0f64, seed in 0u64..1000) {
        let g = GigParams::new(p, a, b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let x = gig_sample(&mut rng, &g).unwrap();
            prop_assert!(x > 0.0 && x.is_finite());
        }
    }
}
