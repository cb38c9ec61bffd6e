//! Gold-standard Gibbs samplers.
//!
//! Gaussian, Laplace and Student-t increments use the latent Gaussian-mixture
//! sampler in [`glm`]; Bernoulli-Laplace increments use the partially
//! collapsed sampler in [`bl`].

pub mod bl;
pub mod glm;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dims, domain, Error, Result};
use crate::forward::ForwardModel;
use crate::levy::{JumpLaw, Signal};
use crate::rng::BenchRng;

/// Gaussian likelihood `N(y; A x, sigma_n^2 I)`.
///
/// Row-selection operators are kept in index form so that the samplers can
/// use banded factorizations.
#[derive(Debug, Clone)]
pub struct Likelihood {
    sigma_n: f64,
    y: DVector<f64>,
    d: usize,
    structure: Structure,
}

#[derive(Debug, Clone)]
enum Structure {
    /// `y[j]` observes `x[observed[j]]`.
    Pointwise { observed: Vec<usize> },
    Dense { a: DMatrix<f64>, gram: DMatrix<f64> },
}

impl Likelihood {
    pub fn from_model(model: &ForwardModel, y: &DVector<f64>) -> Result<Self> {
        if y.len() != model.m() {
            return Err(dims(format!("measurement length {} != {}", y.len(), model.m())));
        }
        let sigma_n = model.noise()?;
        let structure = match model.observed_indices() {
            Some(observed) => Structure::Pointwise { observed },
            None => Structure::Dense {
                a: model.matrix().clone(),
                gram: model.gram().clone(),
            },
        };
        Ok(Self {
            sigma_n,
            y: y.clone(),
            d: model.d(),
            structure,
        })
    }

    /// Same likelihood but always using the dense representation.
    pub fn dense_from_model(model: &ForwardModel, y: &DVector<f64>) -> Result<Self> {
        let mut lik = Self::from_model(model, y)?;
        lik.structure = Structure::Dense {
            a: model.matrix().clone(),
            gram: model.gram().clone(),
        };
        Ok(lik)
    }

    /// Denoising likelihood `N(y; x, sigma^2 I)`.
    pub fn denoising(y: &DVector<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(domain(format!("noise level must be positive, got {sigma}")));
        }
        Ok(Self {
            sigma_n: sigma,
            y: y.clone(),
            d: y.len(),
            structure: Structure::Pointwise {
                observed: (0..y.len()).collect(),
            },
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn sigma_n(&self) -> f64 {
        self.sigma_n
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn is_pointwise(&self) -> bool {
        matches!(self.structure, Structure::Pointwise { .. })
    }

    /// Observed index per measurement, for row-selection operators.
    pub fn observed(&self) -> Option<&[usize]> {
        match &self.structure {
            Structure::Pointwise { observed } => Some(observed),
            Structure::Dense { .. } => None,
        }
    }

    /// Dense `A` (m x d).
    pub fn matrix(&self) -> DMatrix<f64> {
        match &self.structure {
            Structure::Pointwise { observed } => {
                let mut a = DMatrix::zeros(observed.len(), self.d);
                for (r, &i) in observed.iter().enumerate() {
                    a[(r, i)] = 1.0;
                }
                a
            }
            Structure::Dense { a, .. } => a.clone(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> DVector<f64> {
        match &self.structure {
            Structure::Pointwise { observed } => DVector::from_iterator(observed.len(), observed.iter().map(|&i| x[i])),
            Structure::Dense { a, .. } => a * DVector::from_column_slice(x),
        }
    }

    pub fn adjoint(&self, v: &[f64]) -> DVector<f64> {
        match &self.structure {
            Structure::Pointwise { observed } => {
                let mut out = DVector::zeros(self.d);
                for (r, &i) in observed.iter().enumerate() {
                    out[i] += v[r];
                }
                out
            }
            Structure::Dense { a, .. } => a.tr_mul(&DVector::from_column_slice(v)),
        }
    }

    /// `A^T A / sigma_n^2`, dense.
    pub fn data_precision(&self) -> DMatrix<f64> {
        let s2 = self.sigma_n * self.sigma_n;
        match &self.structure {
            Structure::Pointwise { .. } => DMatrix::from_diagonal(&self.data_precision_diagonal().unwrap()),
            Structure::Dense { gram, .. } => gram / s2,
        }
    }

    /// Diagonal of `A^T A / sigma_n^2` for row-selection operators.
    pub fn data_precision_diagonal(&self) -> Option<DVector<f64>> {
        let inv = 1.0 / (self.sigma_n * self.sigma_n);
        self.observed().map(|obs| {
            let mut diag = DVector::zeros(self.d);
            for &i in obs {
                diag[i] += inv;
            }
            diag
        })
    }

    /// `A^T y / sigma_n^2`.
    pub fn data_shift(&self) -> DVector<f64> {
        self.adjoint(self.y.as_slice()) / (self.sigma_n * self.sigma_n)
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        let r = self.apply(x) - &self.y;
        -0.5 * r.norm_squared() / (self.sigma_n * self.sigma_n)
    }
}

/// Chain lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub burn_in: usize,
    pub samples: usize,
}

impl ChainSettings {
    /// Chains for the denoising subproblem inside diffusion sampling.
    pub const DENOISER: Self = Self {
        burn_in: 100,
        samples: 300,
    };
    /// Outer-problem chains at full scale.
    pub const PAPER: Self = Self {
        burn_in: 100_000,
        samples: 200_000,
    };
    /// Outer-problem chains at desk scale.
    pub const DESK: Self = Self {
        burn_in: 5_000,
        samples: 20_000,
    };
}

/// Post burn-in draws, one signal per column.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub draws: DMatrix<f64>,
    pub burn_in: usize,
    pub seed: Option<u64>,
}

impl ChainResult {
    pub fn len(&self) -> usize {
        self.draws.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.ncols() == 0
    }

    pub fn draw(&self, i: usize) -> Signal {
        self.draws.column(i).into_owned()
    }

    pub fn mean(&self) -> Signal {
        self.draws.column_mean()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainStatistics {
    pub mean: Signal,
    pub marginal_var: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Sample mean, per-index variance and unbiased covariance of the draws.
pub fn chain_statistics(result: &ChainResult) -> Result<ChainStatistics> {
    if result.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: result.len(),
        });
    }
    let (mean, covariance) = crate::linalg::sample_covariance(&result.draws);
    Ok(ChainStatistics {
        mean,
        marginal_var: covariance.diagonal(),
        covariance,
    })
}

/// Streaming accumulator of the posterior mean and marginal variances
/// (Welford), for chains too long to keep in memory.
#[derive(Debug, Clone)]
pub struct RunningMoments {
    n: usize,
    mean: DVector<f64>,
    m2: DVector<f64>,
}

impl RunningMoments {
    pub fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(d),
            m2: DVector::zeros(d),
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn variance(&self) -> DVector<f64> {
        &self.m2 / (self.n.max(2) - 1) as f64
    }
}

/// Posterior sampler for any jump law.
#[derive(Debug, Clone)]
pub enum PosteriorSampler<'a> {
    Glm(glm::GlmProblem<'a>),
    Bl(bl::BlProblem<'a>),
}

impl<'a> PosteriorSampler<'a> {
    pub fn new(law: &JumpLaw, lik: &'a Likelihood) -> Result<Self> {
        match *law {
            JumpLaw::BernoulliLaplace { zero_prob, rate } => Ok(Self::Bl(bl::BlProblem::new(lik, zero_prob, rate)?)),
            _ => Ok(Self::Glm(glm::GlmProblem::new(lik, *law)?)),
        }
    }

    /// Runs a chain from `init`, calling `sink` on every post burn-in draw.
    pub fn run<F: FnMut(&[f64])>(&self, settings: ChainSettings, init: &[f64], rng: &mut BenchRng, sink: F) -> Result<()> {
        match self {
            Self::Glm(p) => p.run(settings, init, rng, sink),
            Self::Bl(p) => p.run(settings, init, rng, sink),
        }
    }

    pub fn collect(&self, settings: ChainSettings, init: &[f64], rng: &mut BenchRng) -> Result<ChainResult> {
        if settings.samples == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        let d = init.len();
        let mut data = Vec::with_capacity(d * settings.samples);
        self.run(settings, init, rng, |x| data.extend_from_slice(x))?;
        Ok(ChainResult {
            draws: DMatrix::from_vec(d, settings.samples, data),
            burn_in: settings.burn_in,
            seed: None,
        })
    }
}

/// Runs a posterior chain and keeps every post burn-in draw.
pub fn sample_posterior(
    law: &JumpLaw,
    lik: &Likelihood,
    settings: ChainSettings,
    init: &[f64],
    rng: &mut BenchRng,
) -> Result<ChainResult> {
    PosteriorSampler::new(law, lik)?.collect(settings, init, rng)
}

pub(crate) fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

pub(crate) fn check_init(lik: &Likelihood, init: &[f64]) -> Result<()> {
    if init.len() != lik.d() {
        return Err(dims(format!("initial signal has length {}, expected {}", init.len(), lik.d())));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(domain("initial signal must be finite"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistics_of_identical_draws() {
        let r = ChainResult {
            draws: DMatrix::from_fn(3, 5, |i, _| i as f64),
            burn_in: 0,
            seed: None,
        };
        let s = chain_statistics(&r).unwrap();
        assert_eq!(s.mean.as_slice(), &[0.0, 1.0, 2.0]);
        assert!(s.marginal_var.iter().all(|&v| v == 0.0));
        assert!(s.covariance.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn statistics_need_two_draws() {
        let r = ChainResult {
            draws: DMatrix::zeros(3, 1),
            burn_in: 0,
            seed: None,
        };
        assert!(matches!(chain_statistics(&r), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn standard_normal_covariance() {
        let mut rng = crate::rng::stream(4, &[]);
        let d = 4;
        let n = 10_000;
        let data = standard_normal_vec(d * n, &mut rng);
        let r = ChainResult {
            draws: DMatrix::from_vec(d, n, data),
            burn_in: 0,
            seed: None,
        };
        let s = chain_statistics(&r).unwrap();
        let err = (s.covariance - DMatrix::<f64>::identity(d, d)).norm() / 2.0;
        assert!(err < 0.05);
    }

    #[test]
    fn running_moments_match_batch() {
        let mut rng = crate::rng::stream(5, &[]);
        let data = standard_normal_vec(3 * 50, &mut rng);
        let r = ChainResult {
            draws: DMatrix::from_vec(3, 50, data),
            burn_in: 0,
            seed: None,
        };
        let mut acc = RunningMoments::new(3);
        for c in r.draws.column_iter() {
            acc.push(c.as_slice());
        }
        let s = chain_statistics(&r).unwrap();
        assert!((acc.mean() - &s.mean).amax() < 1e-12);
        assert!((acc.variance() - &s.marginal_var).amax() < 1e-12);
    }
}
