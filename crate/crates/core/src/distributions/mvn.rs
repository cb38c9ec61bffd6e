use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dims, Error, Result};
use crate::linalg::{asymmetry, cholesky_with_jitter};

const SYMMETRY_TOL: f64 = 1e-12;
const JITTER_RETRIES: usize = 3;

/// Gaussian in information form: mean `precision^{-1} shift`, covariance
/// `precision^{-1}`.
#[derive(Debug, Clone)]
pub struct PrecisionGaussian {
    precision: DMatrix<f64>,
    shift: DVector<f64>,
}

impl PrecisionGaussian {
    pub fn new(precision: DMatrix<f64>, shift: DVector<f64>) -> Result<Self> {
        if !precision.is_square() || precision.nrows() != shift.len() {
            return Err(dims(format!(
                "precision is {}x{}, shift has length {}",
                precision.nrows(),
                precision.ncols(),
                shift.len()
            )));
        }
        let asym = asymmetry(&precision);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotPositiveDefinite(format!(
                "precision is not symmetric (relative asymmetry {asym:e})"
            )));
        }
        Ok(Self { precision, shift })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    /// Factors the precision and returns a reusable sampler.
    pub fn factor(&self) -> Result<FactoredGaussian> {
        let chol = cholesky_with_jitter(&self.precision, JITTER_RETRIES).ok_or_else(|| {
            Error::NotPositiveDefinite(format!("precision of dimension {} could not be factorized", self.dim()))
        })?;
        let mean = chol.solve(&self.shift);
        Ok(FactoredGaussian {
            l: chol.unpack(),
            mean,
        })
    }

    pub fn mean(&self) -> Result<DVector<f64>> {
        Ok(self.factor()?.mean)
    }
}

/// Precision Cholesky factor plus the mean, for repeated draws.
#[derive(Debug, Clone)]
pub struct FactoredGaussian {
    l: DMatrix<f64>,
    mean: DVector<f64>,
}

impl FactoredGaussian {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// `mean + L^{-T} z`, which has covariance `(L L^T)^{-1}`.
    pub fn sample_with(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut v = z.clone();
        crate::linalg::solve_upper_transposed_in_place(&self.l, v.as_mut_slice());
        v + &self.mean
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample(StandardNormal));
        self.sample_with(&z)
    }
}

/// One draw from the Gaussian `g`.
pub fn sample_mv_gaussian<R: Rng + ?Sized>(g: &PrecisionGaussian, rng: &mut R) -> Result<DVector<f64>> {
    Ok(g.factor()?.sample(rng))
}
