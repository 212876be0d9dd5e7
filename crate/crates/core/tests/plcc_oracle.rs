use dualrate_core::metrics::plcc;
use dualrate_core::rng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Kahan-compensated sum.
fn ksum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Covariance formula evaluated directly with compensated sums.
fn oracle(p: &[f64], t: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mp = ksum(p.iter().copied()) / n;
    let mt = ksum(t.iter().copied()) / n;
    let sxy = ksum(p.iter().zip(t).map(|(a, b)| (a - mp) * (b - mt)));
    let sxx = ksum(p.iter().map(|a| (a - mp) * (a - mp)));
    let syy = ksum(t.iter().map(|b| (b - mt) * (b - mt)));
    sxy / (sxx * syy).sqrt()
}

/// Textbook pairwise form: sum over i<j of (p_i-p_j)(t_i-t_j), which never
/// touches the means.
fn pairwise(p: &[f64], t: &[f64]) -> f64 {
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            let (dp, dt) = (p[i] - p[j], t[i] - t[j]);
            sxy += dp * dt;
            sxx += dp * dp;
            syy += dt * dt;
        }
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn matches_brute_force_on_random_pairs() {
    let mut rng = rng::stream(2024, "plcc-oracle");
    for case in 0..1000 {
        let n = rng.random_range(2..=1000usize);
        let rho: f64 = rng.random_range(-1.0..1.0);
        let scale: f64 = 10f64.powi(rng.random_range(-3..=3));
        let offset: f64 = rng.random_range(-100.0..100.0);
        let p: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t: Vec<f64> = p
            .iter()
            .map(|&x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                offset + scale * (rho * x + (1.0 - rho * rho).sqrt() * z)
            })
            .collect();

        let r = plcc(&p, &t).unwrap();
        let expected = oracle(&p, &t);
        assert!((r - expected).abs() <= 1e-12, "case {case}: {r} vs {expected}");
        if n <= 200 {
            assert!((r - pairwise(&p, &t)).abs() <= 1e-12, "case {case} pairwise");
        }

        assert_eq!(plcc(&t, &p).unwrap(), r, "symmetry, case {case}");
        let a: f64 = rng.random_range(0.1..10.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let b: f64 = rng.random_range(-10.0..10.0);
        let shifted: Vec<f64> = p.iter().map(|x| a * x + b).collect();
        let rs = plcc(&shifted, &t).unwrap();
        assert!((rs - a.signum() * r).abs() <= 1e-12, "affine, case {case}: {rs} vs {r}");
        assert!((-1.0..=1.0).contains(&r));
    }
}

#[test]
fn near_constant_vectors_stay_accurate() {
    // a large offset with tiny spread defeats one-pass formulas
    let p: Vec<f64> = (0..100).map(|i| 1e8 + i as f64 * 1e-4).collect();
    let t: Vec<f64> = (0..100).map(|i| (i as f64).sqrt()).collect();
    let shifted: Vec<f64> = (0..100).map(|i| i as f64 * 1e-4).collect();
    assert!((plcc(&p, &t).unwrap() - plcc(&shifted, &t).unwrap()).abs() < 1e-6);
}
