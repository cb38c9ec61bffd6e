//! Variance-preserving diffusion schedules, the oracle denoiser and the
//! Tweedie and covariance identities shared by the diffusion samplers.
//!
//! Time runs `t = 1..=T` with `alpha_bar(0) = 1`. Iterates handed to a
//! denoiser are in the clean-signal scale: a VP iterate `v_t` corresponds to
//! `x_t = v_t / sqrt(alpha_bar_t)`, a noisy copy of `x_0` with noise level
//! `sigma_t^2 = (1 - alpha_bar_t) / alpha_bar_t`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gibbs::bl::BlBackend;
use crate::gibbs::{ChainSettings, Likelihood, PosteriorSampler};
use crate::levy::{JumpLaw, Signal};
use crate::linalg::sample_covariance;
use crate::rng::BenchRng;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear `beta` from `beta_start` at `t = 1` to `beta_end` at `t = T`.
    pub fn new(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(domain(format!("diffusion needs at least 2 steps, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(domain(format!("need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        Self::from_betas(beta)
    }

    /// Schedule from explicit `beta_1..beta_T`.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 || beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(domain("betas must lie in (0, 1) and number at least 2"));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len() + 1);
        alpha_bar.push(1.0);
        for &b in &beta {
            let prev = *alpha_bar.last().unwrap();
            alpha_bar.push(prev * (1.0 - b));
        }
        Ok(Self { beta, alpha_bar })
    }

    /// `T = 1000`, `beta` from `1e-4` to `2e-2`.
    pub fn standard() -> Self {
        Self::new(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("valid defaults")
    }

    /// Shorter schedule with the endpoints scaled by `1000 / T`, which keeps
    /// `alpha_bar_T` close to the standard schedule's.
    pub fn rescaled(steps: usize) -> Result<Self> {
        let s = DEFAULT_STEPS as f64 / steps as f64;
        Self::new(steps, DEFAULT_BETA_START * s, DEFAULT_BETA_END * s)
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `beta_t`, `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta[t - 1]
    }

    /// `alpha_bar_t`, `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Denoising noise level `sigma_t` with `sigma_t^2 = (1 - alpha_bar_t) / alpha_bar_t`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma2(t).sqrt()
    }

    pub fn sigma2(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]) / self.alpha_bar[t]
    }
}

/// Draws from the denoising posterior `p(x_0 | x_noisy)` with
/// `x_noisy = x_0 + sigma n`.
pub trait Denoiser: Send + Sync {
    fn name(&self) -> &str;

    /// Returns `samples` draws as the columns of a `d x samples` matrix.
    fn denoise(&self, x_noisy: &Signal, sigma: f64, samples: usize, rng: &mut BenchRng) -> Result<DMatrix<f64>>;
}

/// Exact denoiser: a Gibbs chain on the denoising problem, warm-started at
/// the noisy input.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    law: JumpLaw,
    burn_in: usize,
    backend: BlBackend,
}

impl OracleDenoiser {
    pub fn new(law: JumpLaw) -> Self {
        Self {
            law,
            burn_in: ChainSettings::DENOISER.burn_in,
            backend: BlBackend::Auto,
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_backend(mut self, backend: BlBackend) -> Self {
        self.backend = backend;
        self
    }

    pub fn law(&self) -> &JumpLaw {
        &self.law
    }
}

impl Denoiser for OracleDenoiser {
    fn name(&self) -> &str {
        "oracle"
    }

    fn denoise(&self, x_noisy: &Signal, sigma: f64, samples: usize, rng: &mut BenchRng) -> Result<DMatrix<f64>> {
        if x_noisy.iter().any(|v| !v.is_finite()) {
            return Err(Error::Denoiser("non-finite denoiser input".into()));
        }
        let lik = Likelihood::denoising(x_noisy, sigma)?;
        let sampler = match (PosteriorSampler::new(&self.law, &lik)?, self.backend) {
            (PosteriorSampler::Bl(p), b) if b != BlBackend::Auto => PosteriorSampler::Bl(p.with_backend(b)?),
            (s, _) => s,
        };
        let settings = ChainSettings {
            burn_in: self.burn_in,
            samples,
        };
        Ok(sampler.collect(settings, x_noisy.as_slice(), rng)?.draws)
    }
}

/// Oracle draws for the VP iterate `x_t` (clean-signal scale) at step `t`.
pub fn oracle_denoise(
    x_t: &Signal,
    t: usize,
    schedule: &DiffusionSchedule,
    law: &JumpLaw,
    samples: usize,
    rng: &mut BenchRng,
) -> Result<DMatrix<f64>> {
    if t == 0 || t > schedule.steps() {
        return Err(domain(format!("step {t} outside 1..={}", schedule.steps())));
    }
    OracleDenoiser::new(*law).denoise(x_t, schedule.sigma(t), samples, rng)
}

/// Score of the VP marginal at `x` (VP scale) from an MMSE estimate of `x_0`:
/// `-(x - sqrt(alpha_bar_t) mmse) / (1 - alpha_bar_t)`.
pub fn tweedie_score(x: &DVector<f64>, t: usize, schedule: &DiffusionSchedule, mmse: &DVector<f64>) -> DVector<f64> {
    let ab = schedule.alpha_bar(t);
    (x - mmse * ab.sqrt()) / -(1.0 - ab)
}

/// Unconditional ancestral sampling with the denoiser's sample mean as the
/// MMSE estimate; the last step adds no noise.
pub fn ddpm_prior_sample(
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    d: usize,
    samples: usize,
    rng: &mut BenchRng,
) -> Result<Signal> {
    let mut x = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    for t in (1..=schedule.steps()).rev() {
        let ab = schedule.alpha_bar(t);
        let noisy = &x / ab.sqrt();
        let draws = denoiser.denoise(&noisy, schedule.sigma(t), samples, rng)?;
        let mmse = draws.column_mean();
        let score = tweedie_score(&x, t, schedule, &mmse);
        let beta = schedule.beta(t);
        x = (&x + score * beta) / (1.0 - beta).sqrt();
        if t > 1 {
            let s = beta.sqrt();
            x.iter_mut().for_each(|v| *v += s * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(x)
}

/// Unbiased sample covariance of the denoiser draws (columns).
pub fn covariance_statistic(draws: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if draws.ncols() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: draws.ncols(),
        });
    }
    Ok(sample_covariance(draws).1)
}

/// Jacobian of the MMSE map with respect to the VP iterate:
/// `sqrt(alpha_bar_t) / (1 - alpha_bar_t) * Cov[x_0 | x_t]`.
pub fn jacobian_from_covariance(cov: &DMatrix<f64>, t: usize, schedule: &DiffusionSchedule) -> DMatrix<f64> {
    let ab = schedule.alpha_bar(t);
    cov * (ab.sqrt() / (1.0 - ab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn two_step_schedule() {
        let s = DiffusionSchedule::new(2, 0.1, 0.1).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.81).abs() < 1e-15);
        assert!((s.sigma(2).powi(2) - 0.19 / 0.81).abs() < 1e-15);
        assert!(DiffusionSchedule::new(1, 0.1, 0.1).is_err());
        assert!(DiffusionSchedule::new(10, 0.2, 0.1).is_err());
        assert!(DiffusionSchedule::new(10, 0.0, 0.1).is_err());
    }

    #[test]
    fn standard_schedule_shape() {
        let s = DiffusionSchedule::standard();
        assert_eq!(s.steps(), 1000);
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(1000) - 2e-2).abs() < 1e-15);
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            if t > 1 {
                assert!(s.sigma(t) > s.sigma(t - 1));
            }
            assert_eq!(s.sigma2(t), (1.0 - s.alpha_bar(t)) / s.alpha_bar(t));
        }
        let r = DiffusionSchedule::rescaled(200).unwrap();
        assert!((r.alpha_bar(200).ln() / s.alpha_bar(1000).ln() - 1.0).abs() < 0.05);
    }

    #[test]
    fn tweedie_fixed_point_and_gaussian_prior() {
        let s = DiffusionSchedule::standard();
        let x = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        for t in [1, 10, 500, 1000] {
            let a = s.alpha_bar(t).sqrt();
            let zero = tweedie_score(&x, t, &s, &(&x / a));
            assert!(zero.amax() < 1e-12);
            // standard normal prior: E[x_0 | x_t] = a x, score = -x
            let score = tweedie_score(&x, t, &s, &(&x * a));
            assert!((score + &x).amax() < 1e-10);
        }
    }

    #[test]
    fn last_step_is_deterministic() {
        struct Fixed;
        impl Denoiser for Fixed {
            fn name(&self) -> &str {
                "fixed"
            }
            fn denoise(&self, x: &Signal, _: f64, s: usize, _: &mut BenchRng) -> Result<DMatrix<f64>> {
                Ok(DMatrix::from_fn(x.len(), s, |i, _| x[i] * 0.5))
            }
        }
        let s = DiffusionSchedule::new(2, 0.1, 0.2).unwrap();
        let a = ddpm_prior_sample(&Fixed, &s, 3, 2, &mut stream(1, &[])).unwrap();
        let b = ddpm_prior_sample(&Fixed, &s, 3, 2, &mut stream(1, &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_concentrates_for_small_noise() {
        let law = JumpLaw::laplace(1.0).unwrap();
        let x = DVector::from_vec(vec![0.5, 1.0, -0.3, 0.2]);
        let sigma = 1e-3;
        let mut rng = stream(2, &[]);
        let draws = OracleDenoiser::new(law).denoise(&x, sigma, 300, &mut rng).unwrap();
        let m = draws.column_mean();
        for i in 0..4 {
            assert!((m[i] - x[i]).abs() < 3.0 * sigma / (300f64).sqrt());
        }
    }

    #[test]
    fn covariance_needs_two_draws() {
        assert!(covariance_statistic(&DMatrix::zeros(3, 1)).is_err());
    }
}
