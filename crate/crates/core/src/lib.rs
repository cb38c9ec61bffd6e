//! Gold-standard posterior sampling and diffusion posterior sampling for
//! linear inverse problems with sparse Levy-process priors.

pub mod baselines;
pub mod diffusion;
pub mod distributions;
pub mod dps;
pub mod error;
pub mod evaluation;
pub mod forward;
pub mod gibbs;
pub mod levy;
pub mod linalg;
pub mod rng;

pub use error::{Error, Result};
