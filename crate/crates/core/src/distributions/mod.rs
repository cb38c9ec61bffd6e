//! Univariate laws of the benchmark and precision-form Gaussian sampling.

pub mod gig;
mod mvn;
pub mod special;

pub use mvn::{sample_mv_gaussian, PrecisionGaussian};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StandardUniform};
use serde::{Deserialize, Serialize};
use statrs::function::{beta::beta_reg, erf::erfc, gamma::gamma_lr, gamma::ln_gamma};

use crate::error::{domain, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// A univariate law. Scale conventions: `Exp` and `Gamma` use rates, `Laplace`
/// uses a scale, and the Bernoulli-Laplace slab uses a rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum UnivariateLaw {
    Gauss { mean: f64, var: f64 },
    Exp { rate: f64 },
    Laplace { scale: f64 },
    StudentT { dof: f64 },
    Gamma { shape: f64, rate: f64 },
    Gig { a: f64, b: f64, p: f64 },
    /// Point mass at zero with probability `zero_prob`, otherwise a Laplace
    /// slab with density `(rate / 2) exp(-rate |x|)`.
    BernoulliLaplace { zero_prob: f64, rate: f64 },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("{name} must be positive and finite, got {v}")))
    }
}

impl UnivariateLaw {
    pub fn gauss(mean: f64, var: f64) -> Result<Self> {
        Self::Gauss { mean, var }.validated()
    }
    pub fn exp(rate: f64) -> Result<Self> {
        Self::Exp { rate }.validated()
    }
    pub fn laplace(scale: f64) -> Result<Self> {
        Self::Laplace { scale }.validated()
    }
    pub fn student_t(dof: f64) -> Result<Self> {
        Self::StudentT { dof }.validated()
    }
    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        Self::Gamma { shape, rate }.validated()
    }
    pub fn gig(a: f64, b: f64, p: f64) -> Result<Self> {
        Self::Gig { a, b, p }.validated()
    }
    pub fn bernoulli_laplace(zero_prob: f64, rate: f64) -> Result<Self> {
        Self::BernoulliLaplace { zero_prob, rate }.validated()
    }

    /// Returns `self` if all parameters are inside their domains.
    pub fn validated(self) -> Result<Self> {
        match self {
            Self::Gauss { mean, var } => {
                if !mean.is_finite() {
                    return Err(domain("Gauss mean must be finite"));
                }
                positive("Gauss variance", var)?
            }
            Self::Exp { rate } => positive("Exp rate", rate)?,
            Self::Laplace { scale } => positive("Laplace scale", scale)?,
            Self::StudentT { dof } => positive("Student-t degrees of freedom", dof)?,
            Self::Gamma { shape, rate } => {
                positive("Gamma shape", shape)?;
                positive("Gamma rate", rate)?
            }
            Self::Gig { a, b, p } => {
                positive("GIG a", a)?;
                positive("GIG b", b)?;
                if !p.is_finite() {
                    return Err(domain("GIG p must be finite"));
                }
            }
            Self::BernoulliLaplace { zero_prob, rate } => {
                if !(0.0..=1.0).contains(&zero_prob) {
                    return Err(domain(format!("BL zero probability must lie in [0, 1], got {zero_prob}")));
                }
                positive("BL rate", rate)?
            }
        }
        Ok(self)
    }

    pub fn is_continuous(&self) -> bool {
        !matches!(self, Self::BernoulliLaplace { zero_prob, .. } if *zero_prob > 0.0)
    }

    /// One draw. Panics only if the law was built bypassing validation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Gauss { mean, var } => mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal),
            Self::Exp { rate } => positive_exp(rng) / rate,
            Self::Laplace { scale } => random_sign(rng) * scale * rng.sample::<f64, _>(Exp1),
            Self::StudentT { dof } => {
                let g = rand_distr::Gamma::new(0.5 * dof, 2.0 / dof).expect("validated dof");
                let prec: f64 = g.sample(rng);
                rng.sample::<f64, _>(StandardNormal) / prec.sqrt()
            }
            Self::Gamma { shape, rate } => {
                let g = rand_distr::Gamma::new(shape, 1.0 / rate).expect("validated gamma");
                loop {
                    let v = g.sample(rng);
                    if v > 0.0 {
                        return v;
                    }
                }
            }
            Self::Gig { a, b, p } => gig::sample(a, b, p, rng),
            Self::BernoulliLaplace { zero_prob, rate } => {
                let u: f64 = rng.sample(StandardUniform);
                if u < zero_prob {
                    0.0
                } else {
                    random_sign(rng) * rng.sample::<f64, _>(Exp1) / rate
                }
            }
        }
    }

    /// Natural-log density. For the Bernoulli-Laplace law the reference
    /// measure is Lebesgue plus a unit atom at zero.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Self::Gauss { mean, var } => -0.5 * (LN_2PI + var.ln()) - 0.5 * (x - mean).powi(2) / var,
            Self::Exp { rate } => {
                if x < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    rate.ln() - rate * x
                }
            }
            Self::Laplace { scale } => -(2.0 * scale).ln() - x.abs() / scale,
            Self::StudentT { dof } => {
                ln_gamma(0.5 * (dof + 1.0))
                    - ln_gamma(0.5 * dof)
                    - 0.5 * (dof * std::f64::consts::PI).ln()
                    - 0.5 * (dof + 1.0) * (x * x / dof).ln_1p()
            }
            Self::Gamma { shape, rate } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
                }
            }
            Self::Gig { a, b, p } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    (p - 1.0) * x.ln() - 0.5 * (a * x + b / x) - gig::ln_normalizer(a, b, p)
                }
            }
            Self::BernoulliLaplace { zero_prob, rate } => {
                if x == 0.0 {
                    zero_prob.ln()
                } else {
                    (1.0 - zero_prob).ln() + (0.5 * rate).ln() - rate * x.abs()
                }
            }
        }
    }

    /// Log-density as a closure, with any normalising constant computed once.
    pub fn log_density_fn(&self) -> impl Fn(f64) -> f64 {
        let law = *self;
        let ln_z = match law {
            Self::Gig { a, b, p } => gig::ln_normalizer(a, b, p),
            _ => 0.0,
        };
        move |x| match law {
            Self::Gig { a, b, p } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    (p - 1.0) * x.ln() - 0.5 * (a * x + b / x) - ln_z
                }
            }
            _ => law.log_density(x),
        }
    }

    /// Cumulative distribution function (right-continuous).
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Gauss { mean, var } => 0.5 * erfc(-(x - mean) / (2.0 * var).sqrt()),
            Self::Exp { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Self::Laplace { scale } => laplace_cdf(x / scale),
            Self::StudentT { dof } => {
                if x == 0.0 {
                    return 0.5;
                }
                let tail = 0.5 * beta_reg(0.5 * dof, 0.5, dof / (dof + x * x));
                if x > 0.0 {
                    1.0 - tail
                } else {
                    tail
                }
            }
            Self::Gamma { shape, rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_lr(shape, rate * x)
                }
            }
            Self::Gig { .. } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let ld = self.log_density_fn();
                // integrate in log space: f(e^s) e^s ds
                let lo = gig_lower_log_bound(&ld);
                let hi = x.ln();
                if hi <= lo {
                    return 0.0;
                }
                let n = (((hi - lo) * 400.0) as usize).clamp(200, 40_000);
                special::simpson(|s| (ld(s.exp()) + s).exp(), lo, hi, n).min(1.0)
            }
            Self::BernoulliLaplace { zero_prob, rate } => {
                let atom = if x >= 0.0 { zero_prob } else { 0.0 };
                atom + (1.0 - zero_prob) * laplace_cdf(rate * x)
            }
        }
    }
}

fn laplace_cdf(z: f64) -> f64 {
    if z < 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}

fn gig_lower_log_bound(ld: &impl Fn(f64) -> f64) -> f64 {
    let mut s: f64 = 0.0;
    let mut step = 1.0;
    while (ld(s.exp()) + s) > -60.0 && s > -700.0 {
        s -= step;
        step *= 1.5;
    }
    s
}

fn random_sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

fn positive_exp<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.sample(Exp1);
        if v > 0.0 {
            return v;
        }
    }
}

/// One draw from `law`; see [`UnivariateLaw::sample`].
pub fn sample_univariate<R: Rng + ?Sized>(law: &UnivariateLaw, rng: &mut R) -> Result<f64> {
    Ok(law.validated()?.sample(rng))
}

/// Log density of `law` at `x`; see [`UnivariateLaw::log_density`].
pub fn log_density_univariate(law: &UnivariateLaw, x: f64) -> Result<f64> {
    Ok(law.validated()?.log_density(x))
}

/// One draw from `GIG(a, b, p)`.
pub fn sample_gig<R: Rng + ?Sized>(a: f64, b: f64, p: f64, rng: &mut R) -> Result<f64> {
    UnivariateLaw::gig(a, b, p)?;
    Ok(gig::sample(a, b, p, rng))
}
