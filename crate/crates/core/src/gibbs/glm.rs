//! Latent-variable Gibbs sampler for Gaussian scale-mixture increments.
//!
//! The factor matrix is `K = [A; D]`: the first `m` factors are the Gaussian
//! measurement terms, the last `d` are the increment laws. Each increment
//! factor is a Gaussian given a latent scale, so the signal conditional is a
//! Gaussian with precision `A^T A / sigma_n^2 + D^T diag(1 / s) D`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Distribution;

use super::{check_init, standard_normal_vec, ChainSettings, Likelihood};
use crate::distributions::{gig, PrecisionGaussian};
use crate::error::{domain, Error, Result};
use crate::levy::{apply_d, JumpLaw, Signal};
use crate::linalg::TridiagCholesky;
use crate::rng::BenchRng;

/// Jump variances below this are treated as this value; they only arise when
/// an increment is numerically zero.
const MIN_VARIANCE: f64 = 1e-100;

#[derive(Debug, Clone)]
pub struct GlmProblem<'a> {
    lik: &'a Likelihood,
    law: JumpLaw,
    unit_gamma: Option<rand_distr::Gamma<f64>>,
}

impl<'a> GlmProblem<'a> {
    pub fn new(lik: &'a Likelihood, law: JumpLaw) -> Result<Self> {
        let law = law.validated()?;
        let unit_gamma = match law {
            JumpLaw::BernoulliLaplace { .. } => {
                return Err(domain("Bernoulli-Laplace increments need the partially collapsed sampler"))
            }
            JumpLaw::StudentT { dof } => Some(rand_distr::Gamma::new(0.5 * (dof + 1.0), 1.0).expect("dof > 0")),
            _ => None,
        };
        Ok(Self { lik, law, unit_gamma })
    }

    pub fn likelihood(&self) -> &Likelihood {
        self.lik
    }

    /// Number of factors, `m + d`.
    pub fn factor_count(&self) -> usize {
        self.lik.m() + self.lik.d()
    }

    /// Draws every latent given `x`. Gaussian factors (all measurement
    /// factors, and increments under a Gaussian law) carry the degenerate
    /// latent 0. Laplace latents are variances, Student-t latents precisions.
    pub fn latent_step<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let m = self.lik.m();
        let u = apply_d(x);
        let mut z = vec![0.0; m + u.len()];
        for (k, &uk) in u.iter().enumerate() {
            z[m + k] = self.draw_latent(uk, rng);
        }
        z
    }

    fn draw_latent<R: Rng + ?Sized>(&self, u: f64, rng: &mut R) -> f64 {
        match self.law {
            JumpLaw::Gauss { .. } => 0.0,
            JumpLaw::Laplace { scale } => {
                let a = 1.0 / (scale * scale);
                let b = u * u;
                if b > 0.0 {
                    gig::sample(a, b, 0.5, rng)
                } else {
                    gig::sample_b_zero(a, 0.5, rng)
                }
            }
            JumpLaw::StudentT { dof } => {
                let g = self.unit_gamma.as_ref().expect("set for Student-t");
                loop {
                    let v = g.sample(rng);
                    if v > 0.0 {
                        break v / (0.5 * (dof + u * u));
                    }
                }
            }
            JumpLaw::BernoulliLaplace { .. } => unreachable!("rejected in constructor"),
        }
    }

    /// Increment variances implied by the latents (the last `d` entries of `z`).
    pub fn jump_variances(&self, z: &[f64]) -> Result<Vec<f64>> {
        let m = self.lik.m();
        if z.len() != self.factor_count() {
            return Err(crate::error::dims(format!("latent vector has length {}, expected {}", z.len(), self.factor_count())));
        }
        z[m..]
            .iter()
            .map(|&zk| {
                let v = match self.law {
                    JumpLaw::Gauss { var } => var,
                    JumpLaw::Laplace { .. } => zk,
                    JumpLaw::StudentT { .. } => 1.0 / zk,
                    JumpLaw::BernoulliLaplace { .. } => unreachable!(),
                };
                if v > 0.0 && !v.is_nan() {
                    Ok(v.max(MIN_VARIANCE))
                } else {
                    Err(domain(format!("latent gives non-positive variance {v}")))
                }
            })
            .collect()
    }

    /// Draws the signal given the latents.
    pub fn signal_step<R: Rng + ?Sized>(&self, z: &[f64], rng: &mut R) -> Result<Signal> {
        let var = self.jump_variances(z)?;
        let noise = standard_normal_vec(self.lik.d(), rng);
        self.signal_given_variances(&var, &noise)
    }

    /// Precision-form Gaussian of the signal conditional.
    pub fn conditional(&self, jump_var: &[f64]) -> Result<PrecisionGaussian> {
        let mut q = self.lik.data_precision();
        add_difference_precision(&mut q, jump_var);
        PrecisionGaussian::new(q, self.lik.data_shift())
    }

    fn signal_given_variances(&self, jump_var: &[f64], noise: &[f64]) -> Result<Signal> {
        match self.tridiagonal(jump_var)? {
            Some((chol, mean)) => Ok(tridiagonal_draw(&chol, &mean, noise)),
            None => {
                let f = self.conditional(jump_var)?.factor()?;
                Ok(f.sample_with(&DVector::from_column_slice(noise)))
            }
        }
    }

    /// Tridiagonal factor and mean, for row-selection operators.
    fn tridiagonal(&self, jump_var: &[f64]) -> Result<Option<(TridiagCholesky, Vec<f64>)>> {
        let Some(obs) = self.lik.data_precision_diagonal() else {
            return Ok(None);
        };
        let d = jump_var.len();
        let prec: Vec<f64> = jump_var.iter().map(|v| 1.0 / v).collect();
        let mut diag = vec![0.0; d];
        let mut sub = vec![0.0; d.saturating_sub(1)];
        for i in 0..d {
            diag[i] = obs[i] + prec[i] + if i + 1 < d { prec[i + 1] } else { 0.0 };
            if i + 1 < d {
                sub[i] = -prec[i + 1];
            }
        }
        let chol = TridiagCholesky::factor(&diag, &sub)
            .ok_or_else(|| Error::NotPositiveDefinite("tridiagonal signal precision".into()))?;
        let mut mean = self.lik.data_shift().as_slice().to_vec();
        chol.solve(&mut mean);
        Ok(Some((chol, mean)))
    }

    /// Runs the chain from `init`; `sink` sees each post burn-in draw.
    pub fn run<F: FnMut(&[f64])>(&self, settings: ChainSettings, init: &[f64], rng: &mut BenchRng, mut sink: F) -> Result<()> {
        check_init(self.lik, init)?;
        let d = self.lik.d();
        if let JumpLaw::Gauss { var } = self.law {
            // No latent state: every signal step is an exact posterior draw,
            // so burn-in iterations would be discarded unchanged.
            let var = vec![var; d];
            return match self.tridiagonal(&var)? {
                Some((chol, mean)) => {
                    for _ in 0..settings.samples {
                        let noise = standard_normal_vec(d, rng);
                        sink(tridiagonal_draw(&chol, &mean, &noise).as_slice());
                    }
                    Ok(())
                }
                None => {
                    let f = self.conditional(&var)?.factor()?;
                    for _ in 0..settings.samples {
                        sink(f.sample(rng).as_slice());
                    }
                    Ok(())
                }
            };
        }
        let mut x: Signal = DVector::from_column_slice(init);
        let mut var = vec![0.0; d];
        for it in 0..settings.burn_in + settings.samples {
            let u = apply_d(x.as_slice());
            for k in 0..d {
                let z = self.draw_latent(u[k], rng);
                var[k] = match self.law {
                    JumpLaw::Laplace { .. } => z,
                    _ => 1.0 / z,
                }
                .max(MIN_VARIANCE);
            }
            let noise = standard_normal_vec(d, rng);
            x = self.signal_given_variances(&var, &noise)?;
            if it >= settings.burn_in {
                sink(x.as_slice());
            }
        }
        Ok(())
    }
}

fn tridiagonal_draw(chol: &TridiagCholesky, mean: &[f64], noise: &[f64]) -> Signal {
    let mut v = noise.to_vec();
    chol.solve_upper(&mut v);
    DVector::from_iterator(v.len(), v.iter().zip(mean).map(|(a, b)| a + b))
}

/// Adds `D^T diag(1 / var) D` to `q`.
pub(crate) fn add_difference_precision(q: &mut DMatrix<f64>, var: &[f64]) {
    let d = var.len();
    for k in 0..d {
        let p = 1.0 / var[k];
        q[(k, k)] += p;
        if k > 0 {
            q[(k - 1, k - 1)] += p;
            q[(k, k - 1)] -= p;
            q[(k - 1, k)] -= p;
        }
    }
}

/// Closed-form posterior for Gaussian increments with variance `var`:
/// returns (mean, covariance).
pub fn gaussian_posterior(lik: &Likelihood, var: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut q = lik.data_precision();
    add_difference_precision(&mut q, &vec![var; lik.d()]);
    let chol = q
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Gaussian posterior precision".into()))?;
    Ok((chol.solve(&lik.data_shift()), chol.inverse()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{build_operator, OperatorKind};
    use crate::gibbs::{chain_statistics, sample_posterior};
    use crate::rng::stream;

    #[test]
    fn gaussian_factors_have_degenerate_latents() {
        let y = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let lik = Likelihood::denoising(&y, 0.5).unwrap();
        let p = GlmProblem::new(&lik, JumpLaw::gauss(1.0).unwrap()).unwrap();
        let z = p.latent_step(&[1.0, 2.0, 3.0], &mut stream(0, &[]));
        assert_eq!(z, vec![0.0; 6]);
    }

    #[test]
    fn student_latent_at_zero_increment() {
        let y = DVector::zeros(1);
        let lik = Likelihood::denoising(&y, 1.0).unwrap();
        let p = GlmProblem::new(&lik, JumpLaw::student_t(2.0).unwrap()).unwrap();
        let mut rng = stream(1, &[]);
        let n = 200_000;
        let mean = (0..n).map(|_| p.latent_step(&[0.0], &mut rng)[1]).sum::<f64>() / n as f64;
        assert!((mean - 1.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn laplace_latent_at_zero_increment_is_gamma_half() {
        let y = DVector::zeros(1);
        let lik = Likelihood::denoising(&y, 1.0).unwrap();
        let p = GlmProblem::new(&lik, JumpLaw::laplace(1.0).unwrap()).unwrap();
        let mut rng = stream(2, &[]);
        let n = 200_000;
        // Gamma(1/2, rate 1/2) has mean 1
        let mean = (0..n).map(|_| p.latent_step(&[0.0], &mut rng)[1]).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn scalar_conjugacy() {
        // d = 1, A = I: precision 1/s^2 + 1/v, mean y/s^2 / precision
        let y = DVector::from_vec(vec![2.0]);
        let lik = Likelihood::denoising(&y, 0.5).unwrap();
        let p = GlmProblem::new(&lik, JumpLaw::gauss(1.0).unwrap()).unwrap();
        let q = 4.0 + 1.0;
        let g = p.conditional(&[1.0]).unwrap();
        assert!((g.mean().unwrap()[0] - 8.0 / q).abs() < 1e-14);
        let (mean, cov) = gaussian_posterior(&lik, 1.0).unwrap();
        assert!((mean[0] - 8.0 / q).abs() < 1e-14);
        assert!((cov[(0, 0)] - 1.0 / q).abs() < 1e-14);
    }

    #[test]
    fn tridiagonal_and_dense_paths_agree() {
        let mut rng = stream(3, &[]);
        let model = build_operator(OperatorKind::Imputation, 12, &mut rng).unwrap().with_noise(0.3).unwrap();
        let y = DVector::from_fn(model.m(), |i, _| (i as f64).sin());
        let fast = Likelihood::from_model(&model, &y).unwrap();
        let dense = Likelihood::dense_from_model(&model, &y).unwrap();
        let law = JumpLaw::laplace(1.0).unwrap();
        let pf = GlmProblem::new(&fast, law).unwrap();
        let pd = GlmProblem::new(&dense, law).unwrap();
        let var: Vec<f64> = (0..12).map(|i| 0.1 + i as f64 * 0.2).collect();
        let noise: Vec<f64> = (0..12).map(|i| (i as f64 * 1.3).cos()).collect();
        let a = pf.signal_given_variances(&var, &noise).unwrap();
        let b = pd.signal_given_variances(&var, &noise).unwrap();
        assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn precision_is_symmetric_positive_definite() {
        let mut rng = stream(4, &[]);
        let model = build_operator(OperatorKind::Convolution, 16, &mut rng).unwrap().with_noise(0.1).unwrap();
        let y = DVector::zeros(16);
        let lik = Likelihood::from_model(&model, &y).unwrap();
        let p = GlmProblem::new(&lik, JumpLaw::student_t(1.0).unwrap()).unwrap();
        let var: Vec<f64> = (0..16).map(|_| rng.random::<f64>() + 1e-3).collect();
        let g = p.conditional(&var).unwrap();
        assert_eq!(g.precision(), &g.precision().transpose());
        assert!(g.precision().clone().cholesky().is_some());
    }

    #[test]
    fn conjugate_chain_matches_closed_form() {
        let mut rng = stream(5, &[]);
        let model = build_operator(OperatorKind::Convolution, 16, &mut rng).unwrap().with_noise(0.2).unwrap();
        let x = crate::levy::synthesize_signal(&JumpLaw::gauss(0.25).unwrap(), 16, &mut rng).unwrap();
        let y = model.apply(x.as_slice()).unwrap();
        let lik = Likelihood::from_model(&model, &y).unwrap();
        let (mean, cov) = gaussian_posterior(&lik, 0.25).unwrap();
        let settings = ChainSettings { burn_in: 10, samples: 20_000 };
        let chain = sample_posterior(&JumpLaw::gauss(0.25).unwrap(), &lik, settings, &vec![0.0; 16], &mut rng).unwrap();
        let s = chain_statistics(&chain).unwrap();
        assert!((&s.mean - &mean).norm() / mean.norm() < 1e-2);
        for i in 0..16 {
            assert!((s.marginal_var[i] / cov[(i, i)] - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn single_draw_and_determinism() {
        let y = DVector::from_vec(vec![0.5, -0.2, 0.1, 0.9]);
        let lik = Likelihood::denoising(&y, 0.3).unwrap();
        let law = JumpLaw::laplace(1.0).unwrap();
        let one = ChainSettings { burn_in: 0, samples: 1 };
        let r = sample_posterior(&law, &lik, one, &[0.0; 4], &mut stream(6, &[])).unwrap();
        assert_eq!(r.len(), 1);
        let s = ChainSettings { burn_in: 5, samples: 50 };
        let a = sample_posterior(&law, &lik, s, &[0.0; 4], &mut stream(7, &[])).unwrap();
        let b = sample_posterior(&law, &lik, s, &[0.0; 4], &mut stream(7, &[])).unwrap();
        assert_eq!(a, b);
    }
}
