//! Generalized inverse Gaussian variates.
//!
//! Density `x^{p-1} exp(-(a x + b / x) / 2)` on `x > 0`. The general sampler
//! is Devroye's rejection scheme on `log x` with a three-piece envelope, which
//! is uniformly efficient over all parameters. For `p = +-1/2` the law is an
//! inverse Gaussian (or its reciprocal) and a direct transformation is used.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, StandardUniform};

/// Draws from `GIG(a, b, p)`; requires `a > 0`, `b > 0`.
pub fn sample<R: Rng + ?Sized>(a: f64, b: f64, p: f64, rng: &mut R) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    if p == 0.5 {
        return 1.0 / inverse_gaussian((a / b).sqrt(), a, rng);
    }
    if p == -0.5 {
        return inverse_gaussian((b / a).sqrt(), b, rng);
    }
    sample_devroye(a, b, p, rng)
}

/// Devroye's sampler for any `p`.
pub fn sample_devroye<R: Rng + ?Sized>(a: f64, b: f64, p: f64, rng: &mut R) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    let omega = (a * b).sqrt();
    let scale = (b / a).sqrt();
    let y = if p >= 0.0 {
        sample_two_param(p, omega, rng)
    } else {
        1.0 / sample_two_param(-p, omega, rng)
    };
    scale * y
}

/// Inverse Gaussian with mean `mu` and shape `shape` by the
/// Michael-Schucany-Haas transformation. The smaller root is computed as
/// `mu^2 / larger` to avoid cancellation when `mu` is large.
pub fn inverse_gaussian<R: Rng + ?Sized>(mu: f64, shape: f64, rng: &mut R) -> f64 {
    let v: f64 = rng.sample(StandardNormal);
    let y = mu * v * v;
    let larger = mu * (1.0 + (y + (4.0 * shape * y + y * y).sqrt()) / (2.0 * shape));
    let smaller = mu * (mu / larger);
    let u: f64 = rng.sample(StandardUniform);
    if u * (mu + smaller) <= mu {
        smaller
    } else {
        larger
    }
}

/// `GIG(a, 0, p)` for `p > 0` is `Gamma(p, a / 2)`.
pub fn sample_b_zero<R: Rng + ?Sized>(a: f64, p: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(p, 2.0 / a).expect("shape and scale are positive");
    loop {
        let v = g.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
}

/// Draws from the density proportional to `x^{lambda-1} exp(-omega (x + 1/x) / 2)`,
/// `lambda >= 0`, `omega > 0`.
fn sample_two_param<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let alpha = (omega * omega + lambda * lambda).sqrt() - lambda;
    let psi = |x: f64| -alpha * (x.cosh() - 1.0) - lambda * (x.exp() - x - 1.0);
    let dpsi = |x: f64| -alpha * x.sinh() - lambda * (x.exp() - 1.0);

    let x = -psi(1.0);
    let t = if (0.5..=2.0).contains(&x) {
        1.0
    } else if x > 2.0 {
        (2.0 / (alpha + lambda)).sqrt()
    } else {
        (4.0 / (alpha + 2.0 * lambda)).ln()
    };
    let x = -psi(-1.0);
    let s = if (0.5..=2.0).contains(&x) {
        1.0
    } else if x > 2.0 {
        (4.0 / (alpha * 1f64.cosh() + lambda)).sqrt()
    } else {
        let inv = 1.0 / alpha;
        let bound = (1.0 + inv + (inv * inv + 2.0 * inv).sqrt()).ln();
        if lambda > 0.0 {
            bound.min(1.0 / lambda)
        } else {
            bound
        }
    };

    let eta = -psi(t);
    let zeta = -dpsi(t);
    let theta = -psi(-s);
    let xi = dpsi(-s);
    let p = 1.0 / xi;
    let r = 1.0 / zeta;
    let td = t - r * eta;
    let sd = s - p * theta;
    let q = td + sd;
    let total = p + q + r;

    let log_x = loop {
        let u: f64 = rng.sample(StandardUniform);
        let v: f64 = open_uniform(rng);
        let w: f64 = rng.sample(StandardUniform);
        let x = if u < q / total {
            -sd + q * v
        } else if u < (q + r) / total {
            td - r * v.ln()
        } else {
            -sd + p * v.ln()
        };
        let chi = if x > td {
            (-eta - zeta * (x - t)).exp()
        } else if x < -sd {
            (-theta + xi * (x + s)).exp()
        } else {
            1.0
        };
        if w * chi <= psi(x).exp() {
            break x;
        }
    };
    let mode_shift = lambda / omega + (1.0 + (lambda / omega).powi(2)).sqrt();
    mode_shift * log_x.exp()
}

fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.sample(StandardUniform);
        if v > 0.0 {
            return v;
        }
    }
}

/// Mean of `GIG(a, b, p)`: `sqrt(b/a) K_{p+1}(sqrt(ab)) / K_p(sqrt(ab))`.
pub fn mean(a: f64, b: f64, p: f64) -> f64 {
    let w = (a * b).sqrt();
    (b / a).sqrt() * (super::special::ln_bessel_k(p + 1.0, w) - super::special::ln_bessel_k(p, w)).exp()
}

/// Log normalising constant so that the density is `x^{p-1} exp(-(ax + b/x)/2 - ln_norm)`.
pub fn ln_normalizer(a: f64, b: f64, p: f64) -> f64 {
    // int x^{p-1} e^{-(ax+b/x)/2} dx = 2 (b/a)^{p/2} K_p(sqrt(ab))
    std::f64::consts::LN_2 + 0.5 * p * (b / a).ln() + super::special::ln_bessel_k(p, (a * b).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn sample_mean(a: f64, b: f64, p: f64, n: usize, seed: u64) -> f64 {
        let mut rng = stream(seed, &[]);
        (0..n).map(|_| sample(a, b, p, &mut rng)).sum::<f64>() / n as f64
    }

    fn devroye_mean(a: f64, b: f64, p: f64, n: usize, seed: u64) -> f64 {
        let mut rng = stream(seed, &[]);
        (0..n).map(|_| sample_devroye(a, b, p, &mut rng)).sum::<f64>() / n as f64
    }

    #[test]
    fn bessel_mean_oracle_matches_half_integer_recurrence() {
        // K_{3/2}/K_{1/2} = 1 + 1/w
        assert!((mean(1.0, 1.0, 0.5) - 2.0).abs() < 1e-10);
        assert!((mean(4.0, 1.0, 0.5) - 0.75).abs() < 1e-10);
    }

    #[test]
    fn mean_matches_oracle_across_regimes() {
        let cases = [
            (1.0, 1.0, 0.5),
            (4.0, 1.0, 0.5),
            (1.0, 1e-4, 0.5),
            (1.0, 400.0, 0.5),
            (2.0, 3.0, -1.7),
            (0.3, 0.2, 2.5),
            (1.0, 1.0, 0.0),
            (5.0, 0.01, -0.5),
        ];
        for (i, &(a, b, p)) in cases.iter().enumerate() {
            let m = sample_mean(a, b, p, 200_000, 10 + i as u64);
            let exact = mean(a, b, p);
            assert!(((m - exact) / exact).abs() < 0.02, "GIG({a},{b},{p}): {m} vs {exact}");
            let m = devroye_mean(a, b, p, 200_000, 30 + i as u64);
            assert!(((m - exact) / exact).abs() < 0.02, "Devroye GIG({a},{b},{p}): {m} vs {exact}");
        }
    }

    #[test]
    fn spec_means_at_one_million_draws() {
        for (a, b, exact) in [(1.0, 1.0, 2.0), (4.0, 1.0, 0.75)] {
            let m = sample_mean(a, b, 0.5, 1_000_000, 91);
            assert!(((m - exact) / exact).abs() < 0.02);
            let m = devroye_mean(a, b, 0.5, 1_000_000, 92);
            assert!(((m - exact) / exact).abs() < 0.02);
        }
    }

    #[test]
    fn inverse_gaussian_moments() {
        let mut rng = stream(8, &[]);
        let (mu, shape) = (1e4, 0.5);
        let n = 200_000;
        // E[1/X] = 1/mu + 1/shape is stable even for very large mu
        let inv = (0..n).map(|_| 1.0 / inverse_gaussian(mu, shape, &mut rng)).sum::<f64>() / n as f64;
        let exact = 1.0 / mu + 1.0 / shape;
        assert!(((inv - exact) / exact).abs() < 0.02, "{inv} vs {exact}");
    }

    #[test]
    fn draws_are_positive() {
        let mut rng = stream(5, &[]);
        for _ in 0..10_000 {
            assert!(sample(1.0, 1e-12, 0.5, &mut rng) > 0.0);
            assert!(sample(1e-6, 50.0, -3.0, &mut rng) > 0.0);
            assert!(sample_devroye(1.0, 1e-12, 0.5, &mut rng) > 0.0);
        }
    }

    #[test]
    fn normalizer_integrates() {
        let (a, b, p) = (2.0, 0.7, -0.3);
        let ln_z = ln_normalizer(a, b, p);
        let total = crate::distributions::special::simpson(
            |s: f64| {
                let x = s.exp();
                ((p - 1.0) * s - 0.5 * (a * x + b / x) - ln_z).exp() * x
            },
            -30.0,
            6.0,
            20_000,
        );
        assert!((total - 1.0).abs() < 1e-8);
    }
}
