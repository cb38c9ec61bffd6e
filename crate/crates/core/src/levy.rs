//! Discrete Levy-process signals: increments, the finite-difference operator
//! and the prior log-density.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::UnivariateLaw;
use crate::error::{domain, Error, Result};

pub type Signal = DVector<f64>;

/// Default signal length.
pub const DEFAULT_DIM: usize = 64;

/// Increment (jump) law of the process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum JumpLaw {
    Gauss { var: f64 },
    Laplace { scale: f64 },
    StudentT { dof: f64 },
    BernoulliLaplace { zero_prob: f64, rate: f64 },
}

impl JumpLaw {
    pub fn gauss(var: f64) -> Result<Self> {
        Self::Gauss { var }.validated()
    }
    pub fn laplace(scale: f64) -> Result<Self> {
        Self::Laplace { scale }.validated()
    }
    pub fn student_t(dof: f64) -> Result<Self> {
        Self::StudentT { dof }.validated()
    }
    pub fn bernoulli_laplace(zero_prob: f64, rate: f64) -> Result<Self> {
        Self::BernoulliLaplace { zero_prob, rate }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        self.univariate().validated()?;
        Ok(self)
    }

    pub fn univariate(&self) -> UnivariateLaw {
        match *self {
            Self::Gauss { var } => UnivariateLaw::Gauss { mean: 0.0, var },
            Self::Laplace { scale } => UnivariateLaw::Laplace { scale },
            Self::StudentT { dof } => UnivariateLaw::StudentT { dof },
            Self::BernoulliLaplace { zero_prob, rate } => UnivariateLaw::BernoulliLaplace { zero_prob, rate },
        }
    }

    /// The laws used by the benchmark tables.
    pub fn benchmark_set() -> Vec<Self> {
        vec![
            Self::Gauss { var: 0.25 },
            Self::Laplace { scale: 1.0 },
            Self::BernoulliLaplace { zero_prob: 0.1, rate: 1.0 },
            Self::StudentT { dof: 1.0 },
            Self::StudentT { dof: 2.0 },
            Self::StudentT { dof: 3.0 },
        ]
    }
}

impl fmt::Display for JumpLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Gauss { var } => write!(f, "gauss:{var}"),
            Self::Laplace { scale } => write!(f, "laplace:{scale}"),
            Self::StudentT { dof } => write!(f, "st:{dof}"),
            Self::BernoulliLaplace { zero_prob, rate } => write!(f, "bl:{zero_prob}:{rate}"),
        }
    }
}

impl FromStr for JumpLaw {
    type Err = Error;

    /// Parses `gauss:VAR`, `laplace:SCALE`, `st:DOF` or `bl:ZERO_PROB:RATE`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let tag = parts.next().unwrap_or_default().to_ascii_lowercase();
        let nums: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| domain(format!("bad number {p:?} in law {s:?}"))))
            .collect::<Result<_>>()?;
        let law = match (tag.as_str(), nums.as_slice()) {
            ("gauss", [v]) => Self::Gauss { var: *v },
            ("laplace", [b]) => Self::Laplace { scale: *b },
            ("st" | "student", [nu]) => Self::StudentT { dof: *nu },
            ("bl", [l, b]) => Self::BernoulliLaplace { zero_prob: *l, rate: *b },
            _ => return Err(domain(format!("unrecognised jump law {s:?}"))),
        };
        law.validated()
    }
}

impl TryFrom<String> for JumpLaw {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<JumpLaw> for String {
    fn from(l: JumpLaw) -> String {
        l.to_string()
    }
}

/// `u = D x`: `u_1 = x_1`, `u_k = x_k - x_{k-1}`.
pub fn apply_d(x: &[f64]) -> DVector<f64> {
    DVector::from_fn(x.len(), |k, _| if k == 0 { x[0] } else { x[k] - x[k - 1] })
}

/// `x = D^{-1} u`: cumulative sums.
pub fn apply_d_inv(u: &[f64]) -> Signal {
    let mut acc = 0.0;
    DVector::from_iterator(
        u.len(),
        u.iter().map(|v| {
            acc += v;
            acc
        }),
    )
}

/// `D^T v`: `(D^T v)_k = v_k - v_{k+1}` with `v_{d+1} = 0`.
pub fn apply_d_transpose(v: &[f64]) -> DVector<f64> {
    let d = v.len();
    DVector::from_fn(d, |k, _| if k + 1 < d { v[k] - v[k + 1] } else { v[k] })
}

/// Synthesized signal together with the increments it was built from. The
/// increments keep exact zeros that subtraction would not recover reliably.
#[derive(Debug, Clone, PartialEq)]
pub struct LevySample {
    pub signal: Signal,
    pub increments: DVector<f64>,
}

pub fn synthesize<R: Rng + ?Sized>(law: &JumpLaw, d: usize, rng: &mut R) -> Result<LevySample> {
    if d == 0 {
        return Err(domain("signal length must be at least 1"));
    }
    let uni = law.validated()?.univariate();
    let increments = DVector::from_fn(d, |_, _| uni.sample(rng));
    let signal = apply_d_inv(increments.as_slice());
    Ok(LevySample { signal, increments })
}

pub fn synthesize_signal<R: Rng + ?Sized>(law: &JumpLaw, d: usize, rng: &mut R) -> Result<Signal> {
    Ok(synthesize(law, d, rng)?.signal)
}

/// Prior log-density of `x`, summed over its increments.
pub fn log_prior(law: &JumpLaw, x: &[f64]) -> f64 {
    log_prior_increments(law, apply_d(x).as_slice())
}

/// Prior log-density given the increments directly (exact zeros preserved).
pub fn log_prior_increments(law: &JumpLaw, u: &[f64]) -> f64 {
    let uni = law.univariate();
    u.iter().map(|&v| uni.log_density(v)).sum()
}
