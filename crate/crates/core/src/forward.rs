//! Linear measurement operators, noise calibration and measurement synthesis.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dims, domain, Error, Result};
use crate::levy::Signal;

/// Half-width of the blur kernel (13 taps).
pub const KERNEL_HALF_WIDTH: usize = 6;
/// Variance of the Gaussian blur kernel.
pub const KERNEL_VARIANCE: f64 = 2.0;
/// Keep probability for imputation entries and Fourier frequencies.
pub const KEEP_PROBABILITY: f64 = 0.4;
/// Frequencies `0..LOW_FREQUENCIES` are always measured.
pub const LOW_FREQUENCIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Identity,
    Convolution,
    Imputation,
    PartialFourier,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 4] = [Self::Identity, Self::Convolution, Self::Imputation, Self::PartialFourier];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "denoising",
            Self::Convolution => "deconvolution",
            Self::Imputation => "imputation",
            Self::PartialFourier => "fourier",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "denoising" => Ok(Self::Identity),
            "convolution" | "deconvolution" => Ok(Self::Convolution),
            "imputation" | "inpainting" => Ok(Self::Imputation),
            "fourier" | "partial_fourier" => Ok(Self::PartialFourier),
            other => Err(domain(format!("unknown operator {other:?}"))),
        }
    }
}

/// Serializable description that fully determines an operator matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorSpec {
    Identity { d: usize },
    Convolution { d: usize, kernel: Vec<f64> },
    Imputation { d: usize, kept: Vec<usize> },
    PartialFourier { d: usize, kept_frequencies: Vec<usize> },
}

impl OperatorSpec {
    pub fn kind(&self) -> OperatorKind {
        match self {
            Self::Identity { .. } => OperatorKind::Identity,
            Self::Convolution { .. } => OperatorKind::Convolution,
            Self::Imputation { .. } => OperatorKind::Imputation,
            Self::PartialFourier { .. } => OperatorKind::PartialFourier,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Identity { d }
            | Self::Convolution { d, .. }
            | Self::Imputation { d, .. }
            | Self::PartialFourier { d, .. } => *d,
        }
    }
}

/// Normalised 13-tap Gaussian kernel, `g[k] ∝ exp(-k^2 / 4)` for `k = -6..=6`.
pub fn blur_kernel() -> Vec<f64> {
    let h = KERNEL_HALF_WIDTH as i64;
    let raw: Vec<f64> = (-h..=h).map(|k| (-((k * k) as f64) / (2.0 * KERNEL_VARIANCE)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Rows of the real DFT: frequency `f` contributes a cosine row and a
/// negated sine row (unnormalised).
fn fourier_rows(d: usize, freqs: &[usize]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(2 * freqs.len(), d);
    for (r, &f) in freqs.iter().enumerate() {
        for k in 0..d {
            // reduce f k mod d before scaling to keep the phase exact
            let phase = 2.0 * std::f64::consts::PI * ((f * k) % d) as f64 / d as f64;
            a[(2 * r, k)] = phase.cos();
            a[(2 * r + 1, k)] = -phase.sin();
        }
    }
    a
}

/// A linear operator `A` (m x d) and its calibrated noise level.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    spec: OperatorSpec,
    matrix: DMatrix<f64>,
    gram: DMatrix<f64>,
    sigma_n: Option<f64>,
}

/// Persisted form of a [`ForwardModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardModelRecord {
    pub operator: OperatorSpec,
    pub sigma_n: Option<f64>,
}

impl ForwardModel {
    pub fn from_spec(spec: OperatorSpec) -> Result<Self> {
        let d = spec.dim();
        if d == 0 {
            return Err(dims("operator dimension must be positive"));
        }
        let matrix = match &spec {
            OperatorSpec::Identity { .. } => DMatrix::identity(d, d),
            OperatorSpec::Convolution { kernel, .. } => {
                if kernel.len() != 2 * KERNEL_HALF_WIDTH + 1 {
                    return Err(dims(format!("kernel must have {} taps", 2 * KERNEL_HALF_WIDTH + 1)));
                }
                if d < kernel.len() {
                    return Err(dims(format!("convolution needs d >= {}, got {d}", kernel.len())));
                }
                let h = KERNEL_HALF_WIDTH as isize;
                let mut a = DMatrix::zeros(d, d);
                for i in 0..d {
                    for (t, &g) in kernel.iter().enumerate() {
                        let k = t as isize - h;
                        let j = (i as isize - k).rem_euclid(d as isize) as usize;
                        a[(i, j)] += g;
                    }
                }
                a
            }
            OperatorSpec::Imputation { kept, .. } => {
                if kept.windows(2).any(|w| w[0] >= w[1]) || kept.iter().any(|&i| i >= d) {
                    return Err(dims("imputation indices must be increasing and in range"));
                }
                let mut a = DMatrix::zeros(kept.len(), d);
                for (r, &i) in kept.iter().enumerate() {
                    a[(r, i)] = 1.0;
                }
                a
            }
            OperatorSpec::PartialFourier { kept_frequencies, .. } => {
                let top = d / 2;
                if kept_frequencies.windows(2).any(|w| w[0] >= w[1]) || kept_frequencies.iter().any(|&f| f > top) {
                    return Err(dims("Fourier frequencies must be increasing and at most d/2"));
                }
                if (0..LOW_FREQUENCIES).any(|f| !kept_frequencies.contains(&f)) {
                    return Err(domain("the lowest five frequencies must be kept"));
                }
                fourier_rows(d, kept_frequencies)
            }
        };
        let gram = matrix.tr_mul(&matrix);
        Ok(Self {
            spec,
            matrix,
            gram,
            sigma_n: None,
        })
    }

    pub fn from_record(record: &ForwardModelRecord) -> Result<Self> {
        let m = Self::from_spec(record.operator.clone())?;
        match record.sigma_n {
            Some(s) => m.with_noise(s),
            None => Ok(m),
        }
    }

    pub fn record(&self) -> ForwardModelRecord {
        ForwardModelRecord {
            operator: self.spec.clone(),
            sigma_n: self.sigma_n,
        }
    }

    pub fn with_noise(mut self, sigma_n: f64) -> Result<Self> {
        if !(sigma_n > 0.0 && sigma_n.is_finite()) {
            return Err(domain(format!("noise level must be positive, got {sigma_n}")));
        }
        self.sigma_n = Some(sigma_n);
        Ok(self)
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn kind(&self) -> OperatorKind {
        self.spec.kind()
    }

    pub fn d(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `A^T A`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn sigma_n(&self) -> Option<f64> {
        self.sigma_n
    }

    /// Noise level, or a domain error if the model is uncalibrated.
    pub fn noise(&self) -> Result<f64> {
        self.sigma_n.ok_or_else(|| domain("forward model has no calibrated noise level"))
    }

    /// For row-selection operators, the observed indices; `None` otherwise.
    pub fn observed_indices(&self) -> Option<Vec<usize>> {
        match &self.spec {
            OperatorSpec::Identity { d } => Some((0..*d).collect()),
            OperatorSpec::Imputation { kept, .. } => Some(kept.clone()),
            _ => None,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.d() {
            return Err(dims(format!("signal has length {}, operator expects {}", x.len(), self.d())));
        }
        Ok(&self.matrix * DVector::from_column_slice(x))
    }

    pub fn adjoint(&self, v: &[f64]) -> Result<DVector<f64>> {
        if v.len() != self.m() {
            return Err(dims(format!("vector has length {}, operator has {} rows", v.len(), self.m())));
        }
        Ok(self.matrix.tr_mul(&DVector::from_column_slice(v)))
    }
}

/// Builds an operator of the given kind; random masks are drawn from `rng`.
pub fn build_operator<R: Rng + ?Sized>(kind: OperatorKind, d: usize, rng: &mut R) -> Result<ForwardModel> {
    let spec = match kind {
        OperatorKind::Identity => OperatorSpec::Identity { d },
        OperatorKind::Convolution => OperatorSpec::Convolution { d, kernel: blur_kernel() },
        OperatorKind::Imputation => OperatorSpec::Imputation {
            d,
            kept: (0..d).filter(|_| rng.random::<f64>() < KEEP_PROBABILITY).collect(),
        },
        OperatorKind::PartialFourier => {
            if d / 2 + 1 < LOW_FREQUENCIES {
                return Err(dims(format!("partial Fourier needs d >= {}, got {d}", 2 * (LOW_FREQUENCIES - 1))));
            }
            let kept_frequencies = (0..=d / 2)
                .filter(|&f| f < LOW_FREQUENCIES || rng.random::<f64>() < KEEP_PROBABILITY)
                .collect();
            OperatorSpec::PartialFourier { d, kept_frequencies }
        }
    };
    ForwardModel::from_spec(spec)
}

/// Noise level giving the requested median SNR, with SNR measured as
/// `||Ax||^2 / (m sigma^2)` in decibels.
pub fn calibrate_noise(model: &ForwardModel, signals: &[Signal], target_snr_db: f64) -> Result<f64> {
    if signals.is_empty() {
        return Err(Error::DegenerateCalibration("empty calibration set".into()));
    }
    let m = model.m() as f64;
    let mut powers = signals
        .iter()
        .map(|x| Ok(model.apply(x.as_slice())?.norm_squared() / m))
        .collect::<Result<Vec<f64>>>()?;
    powers.sort_by(f64::total_cmp);
    let n = powers.len();
    let median = if n % 2 == 1 {
        powers[n / 2]
    } else {
        0.5 * (powers[n / 2 - 1] + powers[n / 2])
    };
    if !(median > 0.0) {
        return Err(Error::DegenerateCalibration("median measurement power is zero".into()));
    }
    Ok((median / 10f64.powf(target_snr_db / 10.0)).sqrt())
}

/// Noisy measurement `y = A x + sigma_n z`.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub model: Arc<ForwardModel>,
    pub y: DVector<f64>,
    pub truth: Option<Signal>,
}

impl Measurement {
    pub fn new(model: Arc<ForwardModel>, y: DVector<f64>, truth: Option<Signal>) -> Result<Self> {
        if y.len() != model.m() {
            return Err(dims(format!("measurement length {} != {}", y.len(), model.m())));
        }
        if let Some(t) = &truth {
            if t.len() != model.d() {
                return Err(dims("truth length does not match the operator"));
            }
        }
        Ok(Self { model, y, truth })
    }
}

pub fn synthesize_measurement<R: Rng + ?Sized>(model: &Arc<ForwardModel>, x: &Signal, rng: &mut R) -> Result<Measurement> {
    let sigma = model.noise()?;
    let mut y = model.apply(x.as_slice())?;
    for v in y.iter_mut() {
        *v += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    Measurement::new(model.clone(), y, Some(x.clone()))
}
