//! Diffusion posterior sampling: a common template and three update steps.
//!
//! Every algorithm alternates between drawing from the denoising posterior at
//! the current iterate and an update step that pulls the iterate toward the
//! measurements. Steps see prior information only through the denoiser draws.
//! Iterates are stored in the clean-signal scale (see [`crate::diffusion`]).

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Denoiser, DiffusionSchedule};
use crate::distributions::PrecisionGaussian;
use crate::error::{dims, domain, Error, Result};
use crate::forward::{ForwardModel, Measurement};
use crate::levy::Signal;
use crate::rng::{purpose, stream};

/// Final noise level of the DPnP schedule.
pub const DPNP_ETA_FINAL: f64 = 0.15;
/// DPnP iteration count.
pub const DPNP_ITERATIONS: usize = 40;
/// Denoiser draws per iteration.
pub const DEFAULT_DENOISER_SAMPLES: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum DpsAlgorithm {
    Cdps {
        zeta: f64,
    },
    #[serde(rename = "diffpir")]
    DiffPir {
        lambda: f64,
        zeta: f64,
    },
    Dpnp {
        eta_initial: f64,
        #[serde(default = "default_eta_final")]
        eta_final: f64,
        #[serde(default = "default_dpnp_iterations")]
        iterations: usize,
    },
    /// An algorithm registered in a [`StepRegistry`].
    Custom {
        name: String,
        params: BTreeMap<String, f64>,
    },
}

fn default_eta_final() -> f64 {
    DPNP_ETA_FINAL
}

fn default_dpnp_iterations() -> usize {
    DPNP_ITERATIONS
}

impl DpsAlgorithm {
    pub fn name(&self) -> &str {
        match self {
            Self::Cdps { .. } => "cdps",
            Self::DiffPir { .. } => "diffpir",
            Self::Dpnp { .. } => "dpnp",
            Self::Custom { name, .. } => name,
        }
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        let mut p = BTreeMap::new();
        match self {
            Self::Cdps { zeta } => {
                p.insert("zeta".into(), *zeta);
            }
            Self::DiffPir { lambda, zeta } => {
                p.insert("lambda".into(), *lambda);
                p.insert("zeta".into(), *zeta);
            }
            Self::Dpnp {
                eta_initial,
                eta_final,
                iterations,
            } => {
                p.insert("eta_initial".into(), *eta_initial);
                p.insert("eta_final".into(), *eta_final);
                p.insert("iterations".into(), *iterations as f64);
            }
            Self::Custom { params, .. } => p = params.clone(),
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Cdps { zeta } => {
                if !(zeta > 0.0 && zeta.is_finite()) {
                    return Err(domain(format!("C-DPS zeta must be positive, got {zeta}")));
                }
            }
            Self::DiffPir { lambda, zeta } => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(domain(format!("DiffPIR lambda must be positive, got {lambda}")));
                }
                if !(zeta > 0.0 && zeta <= 1.0) {
                    return Err(domain(format!("DiffPIR zeta must lie in (0, 1], got {zeta}")));
                }
            }
            Self::Dpnp {
                eta_initial,
                eta_final,
                iterations,
            } => {
                if !(eta_initial > 0.0 && eta_final > 0.0) {
                    return Err(domain("DPnP noise levels must be positive"));
                }
                if iterations == 0 || iterations % 5 != 0 {
                    return Err(domain(format!("DPnP iteration count must be a positive multiple of 5, got {iterations}")));
                }
            }
            Self::Custom { .. } => {}
        }
        Ok(())
    }
}

/// DPnP noise schedule: constant for the first `K / 5` iterations, then
/// geometric interpolation down to `eta_final` at iteration `K`.
pub fn dpnp_schedule(eta_initial: f64, eta_final: f64, iterations: usize) -> Vec<f64> {
    let hold = iterations / 5;
    (1..=iterations)
        .map(|i| {
            if i <= hold {
                eta_initial
            } else {
                let frac = (i - hold) as f64 / (iterations - hold) as f64;
                eta_initial * (eta_final / eta_initial).powf(frac)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpsConfig {
    pub algorithm: DpsAlgorithm,
    pub schedule: DiffusionSchedule,
    pub denoiser_samples: usize,
    pub n_samples: usize,
    /// Weight the DPnP data term by `1 / sigma_n^2`.
    pub dpnp_weight_data: bool,
    #[serde(default)]
    pub cdps_guidance: CdpsGuidance,
    pub keep_trajectories: bool,
}

impl DpsConfig {
    pub fn new(algorithm: DpsAlgorithm, schedule: DiffusionSchedule) -> Self {
        Self {
            algorithm,
            schedule,
            denoiser_samples: DEFAULT_DENOISER_SAMPLES,
            n_samples: 1,
            dpnp_weight_data: true,
            cdps_guidance: CdpsGuidance::default(),
            keep_trajectories: false,
        }
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }
}

/// Inputs shared by every update step at template iteration `t`
/// (counting down to 1).
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub t: usize,
    pub x_t: &'a DVector<f64>,
    pub draws: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
    pub model: &'a ForwardModel,
    /// Standard normal vector for the step's own randomness.
    pub z: &'a DVector<f64>,
}

/// An update step plugged into the template.
pub trait DpsStep: Send + Sync {
    fn name(&self) -> &str;

    /// Number of template iterations.
    fn iterations(&self) -> usize;

    /// Noise level at which the denoiser is queried at iteration `t`.
    fn noise_level(&self, t: usize) -> f64;

    /// Standard deviation of the initial iterate.
    fn initial_scale(&self) -> f64 {
        1.0
    }

    /// Denoiser draws used per iteration given the configured count.
    fn draws_needed(&self, configured: usize) -> usize {
        configured
    }

    fn step(&self, input: &StepInput<'_>) -> Result<Signal>;
}

fn check_draws(draws: &DMatrix<f64>, d: usize, needed: usize) -> Result<()> {
    if draws.nrows() != d {
        return Err(dims(format!("denoiser draws have length {}, expected {d}", draws.nrows())));
    }
    if draws.ncols() < needed {
        return Err(Error::InsufficientSamples {
            needed,
            got: draws.ncols(),
        });
    }
    Ok(())
}

/// `C q` for the unbiased sample covariance `C` of the draws, without forming `C`.
fn covariance_times(draws: &DMatrix<f64>, mean: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
    let s = draws.ncols();
    let mut out = DVector::zeros(mean.len());
    for col in draws.column_iter() {
        let c = col - mean;
        let w = c.dot(q);
        out.axpy(w, &c, 1.0);
    }
    out / (s - 1) as f64
}

/// Step weight of the C-DPS guidance term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdpsGuidance {
    /// `zeta_t = zeta / |A x0_hat - y|`, as in the original C-DPS sampler.
    #[default]
    ResidualNormalized,
    /// `zeta_t = zeta` at every step.
    Constant,
}

/// Covariance-guided DPS step.
pub fn cdps_step(input: &StepInput<'_>, schedule: &DiffusionSchedule, zeta: f64, guidance_kind: CdpsGuidance) -> Result<Signal> {
    let t = input.t;
    check_draws(input.draws, input.x_t.len(), 2)?;
    let x0_hat = input.draws.column_mean();
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let beta = schedule.beta(t);
    let v_t = input.x_t * ab.sqrt();

    let c_xt = schedule.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let c_x0 = ab_prev.sqrt() * beta / (1.0 - ab);
    let sigma_tilde = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
    let mut v = v_t * c_xt + &x0_hat * c_x0 + input.z * sigma_tilde;

    let residual = input.model.apply(x0_hat.as_slice())? - input.y;
    let res_norm = residual.norm();
    if zeta != 0.0 && res_norm > 0.0 {
        let q = input.model.adjoint(residual.as_slice())?;
        let guidance = covariance_times(input.draws, &x0_hat, &q);
        let weight = match guidance_kind {
            CdpsGuidance::ResidualNormalized => zeta / res_norm,
            CdpsGuidance::Constant => zeta,
        };
        v.axpy(-weight * ab.sqrt() / (1.0 - ab), &guidance, 1.0);
    }
    Ok(v / ab_prev.sqrt())
}

/// `(A^T A + rho I)^{-1} (A^T y + rho x0)`.
pub fn data_proximal(model: &ForwardModel, y: &DVector<f64>, x0: &DVector<f64>, rho: f64) -> Result<Signal> {
    let rhs = model.adjoint(y.as_slice())? + x0 * rho;
    if model.observed_indices().is_some() {
        let g = model.gram();
        return Ok(DVector::from_fn(rhs.len(), |i, _| rhs[i] / (g[(i, i)] + rho)));
    }
    let mut m = model.gram().clone();
    for i in 0..m.nrows() {
        m[(i, i)] += rho;
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("proximal system with rho = {rho}")))?;
    Ok(chol.solve(&rhs))
}

/// DiffPIR step with `rho_t = lambda sigma_n^2 / sigma_t^2`.
pub fn diffpir_step(input: &StepInput<'_>, schedule: &DiffusionSchedule, lambda: f64, zeta: f64) -> Result<Signal> {
    let t = input.t;
    check_draws(input.draws, input.x_t.len(), 1)?;
    let sigma_n = input.model.noise()?;
    let x0_hat = input.draws.column_mean();
    let rho = lambda * sigma_n * sigma_n / schedule.sigma2(t);
    let x_star = data_proximal(input.model, input.y, &x0_hat, rho)?;
    let ab = schedule.alpha_bar(t);
    // effective noise of the VP iterate relative to the proximal estimate
    let eps = (input.x_t - &x_star) * (ab.sqrt() / (1.0 - ab).sqrt());
    let sigma_prev = schedule.sigma(t - 1);
    Ok(x_star + (eps * (1.0 - zeta).sqrt() + input.z * zeta.sqrt()) * sigma_prev)
}

/// DPnP step: an exact draw from the Gaussian proportional to
/// `exp(-|A x - y|^2 / (2 s) - |x - x0|^2 / (2 eta^2))` with `x0` the first
/// denoiser draw and `s = sigma_n^2` (or 1 when the data weight is off).
pub fn dpnp_step(input: &StepInput<'_>, eta: f64, sigma_n: f64, weight_data: bool) -> Result<Signal> {
    check_draws(input.draws, input.x_t.len(), 1)?;
    let x0 = input.draws.column(0).into_owned();
    let s = if weight_data { sigma_n * sigma_n } else { 1.0 };
    let inv_eta2 = 1.0 / (eta * eta);
    let shift = input.model.adjoint(input.y.as_slice())? / s + &x0 * inv_eta2;
    if input.model.observed_indices().is_some() {
        let g = input.model.gram();
        return Ok(DVector::from_fn(shift.len(), |i, _| {
            let p = g[(i, i)] / s + inv_eta2;
            shift[i] / p + input.z[i] / p.sqrt()
        }));
    }
    let mut prec = input.model.gram() / s;
    for i in 0..prec.nrows() {
        prec[(i, i)] += inv_eta2;
    }
    Ok(PrecisionGaussian::new(prec, shift)?.factor()?.sample_with(input.z))
}

pub struct CdpsStep {
    pub schedule: DiffusionSchedule,
    pub zeta: f64,
    pub guidance: CdpsGuidance,
}

impl DpsStep for CdpsStep {
    fn name(&self) -> &str {
        "cdps"
    }
    fn iterations(&self) -> usize {
        self.schedule.steps()
    }
    fn noise_level(&self, t: usize) -> f64 {
        self.schedule.sigma(t)
    }
    fn initial_scale(&self) -> f64 {
        1.0 / self.schedule.alpha_bar(self.schedule.steps()).sqrt()
    }
    fn step(&self, input: &StepInput<'_>) -> Result<Signal> {
        cdps_step(input, &self.schedule, self.zeta, self.guidance)
    }
}

pub struct DiffPirStep {
    pub schedule: DiffusionSchedule,
    pub lambda: f64,
    pub zeta: f64,
}

impl DpsStep for DiffPirStep {
    fn name(&self) -> &str {
        "diffpir"
    }
    fn iterations(&self) -> usize {
        self.schedule.steps()
    }
    fn noise_level(&self, t: usize) -> f64 {
        self.schedule.sigma(t)
    }
    fn initial_scale(&self) -> f64 {
        1.0 / self.schedule.alpha_bar(self.schedule.steps()).sqrt()
    }
    fn step(&self, input: &StepInput<'_>) -> Result<Signal> {
        diffpir_step(input, &self.schedule, self.lambda, self.zeta)
    }
}

pub struct DpnpStep {
    /// `eta_i` for `i = 1..=K`; template iteration `t` uses `eta_{K - t + 1}`.
    pub etas: Vec<f64>,
    pub weight_data: bool,
}

impl DpnpStep {
    fn eta(&self, t: usize) -> f64 {
        self.etas[self.etas.len() - t]
    }
}

impl DpsStep for DpnpStep {
    fn name(&self) -> &str {
        "dpnp"
    }
    fn iterations(&self) -> usize {
        self.etas.len()
    }
    fn noise_level(&self, t: usize) -> f64 {
        self.eta(t)
    }
    fn draws_needed(&self, _configured: usize) -> usize {
        1
    }
    fn step(&self, input: &StepInput<'_>) -> Result<Signal> {
        dpnp_step(input, self.eta(input.t), input.model.noise()?, self.weight_data)
    }
}

/// Parameters handed to a step factory.
#[derive(Debug, Clone)]
pub struct StepParams {
    pub params: BTreeMap<String, f64>,
    pub schedule: DiffusionSchedule,
    pub dpnp_weight_data: bool,
    pub cdps_guidance: CdpsGuidance,
}

impl StepParams {
    pub fn get(&self, key: &str) -> Result<f64> {
        self.params
            .get(key)
            .copied()
            .ok_or_else(|| domain(format!("missing algorithm parameter {key:?}")))
    }
}

pub type StepFactory = Arc<dyn Fn(&StepParams) -> Result<Box<dyn DpsStep>> + Send + Sync>;

/// Named step factories; the three built-in steps are pre-registered.
#[derive(Clone)]
pub struct StepRegistry {
    factories: BTreeMap<String, StepFactory>,
}

impl Default for StepRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("cdps", |p| {
            Ok(Box::new(CdpsStep {
                schedule: p.schedule.clone(),
                zeta: p.get("zeta")?,
                guidance: p.cdps_guidance,
            }))
        });
        r.register("diffpir", |p| {
            Ok(Box::new(DiffPirStep {
                schedule: p.schedule.clone(),
                lambda: p.get("lambda")?,
                zeta: p.get("zeta")?,
            }))
        });
        r.register("dpnp", |p| {
            let iterations = p.params.get("iterations").copied().unwrap_or(DPNP_ITERATIONS as f64) as usize;
            let eta_final = p.params.get("eta_final").copied().unwrap_or(DPNP_ETA_FINAL);
            Ok(Box::new(DpnpStep {
                etas: dpnp_schedule(p.get("eta_initial")?, eta_final, iterations),
                weight_data: p.dpnp_weight_data,
            }))
        });
        r
    }
}

impl StepRegistry {
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&StepParams) -> Result<Box<dyn DpsStep>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Arc::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn build(&self, config: &DpsConfig) -> Result<Box<dyn DpsStep>> {
        config.algorithm.validate()?;
        let name = config.algorithm.name();
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| domain(format!("no DPS algorithm registered as {name:?}")))?;
        factory(&StepParams {
            params: config.algorithm.params(),
            schedule: config.schedule.clone(),
            dpnp_weight_data: config.dpnp_weight_data,
            cdps_guidance: config.cdps_guidance,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DpsRunResult {
    /// One posterior draw per column.
    pub draws: DMatrix<f64>,
    /// Iterates `x_T, ..., x_0` per draw, when requested.
    pub trajectories: Option<Vec<DMatrix<f64>>>,
    pub elapsed: Duration,
}

/// Runs one trajectory of the template with its own random stream.
pub fn run_trajectory(
    step: &dyn DpsStep,
    meas: &Measurement,
    denoiser: &dyn Denoiser,
    denoiser_samples: usize,
    rng: &mut crate::rng::BenchRng,
    mut record: Option<&mut Vec<f64>>,
) -> Result<Signal> {
    let d = meas.model.d();
    let iterations = step.iterations();
    let scale = step.initial_scale();
    let mut x = DVector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    let samples = step.draws_needed(denoiser_samples);
    for t in (1..=iterations).rev() {
        if let Some(r) = record.as_deref_mut() {
            r.extend_from_slice(x.as_slice());
        }
        let draws = denoiser.denoise(&x, step.noise_level(t), samples, rng)?;
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        x = step.step(&StepInput {
            t,
            x_t: &x,
            draws: &draws,
            y: &meas.y,
            model: &meas.model,
            z: &z,
        })?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Denoiser(format!("{} produced a non-finite iterate at t = {t}", step.name())));
        }
    }
    if let Some(r) = record {
        r.extend_from_slice(x.as_slice());
    }
    Ok(x)
}

/// Runs `config.n_samples` independent trajectories. Trajectory `j` uses the
/// stream derived from `(seed, [TRAJECTORY, j])`, so results do not depend on
/// how trajectories are scheduled across threads.
pub fn run_dps(
    config: &DpsConfig,
    registry: &StepRegistry,
    meas: &Measurement,
    denoiser: &dyn Denoiser,
    seed: u64,
) -> Result<DpsRunResult> {
    let step = registry.build(config)?;
    let start = Instant::now();
    let d = meas.model.d();
    let one = |j: usize| -> Result<(Signal, Option<DMatrix<f64>>)> {
        let mut rng = stream(seed, &[purpose::TRAJECTORY, j as u64]);
        let mut rec = config.keep_trajectories.then(Vec::new);
        let x = run_trajectory(step.as_ref(), meas, denoiser, config.denoiser_samples, &mut rng, rec.as_mut())?;
        let traj = rec.map(|r| {
            let n = r.len() / d;
            DMatrix::from_vec(d, n, r)
        });
        Ok((x, traj))
    };
    #[cfg(feature = "parallel")]
    let outcomes: Vec<_> = {
        use rayon::prelude::*;
        (0..config.n_samples).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<_> = (0..config.n_samples).map(one).collect();

    let mut draws = DMatrix::zeros(d, config.n_samples);
    let mut trajectories = config.keep_trajectories.then(Vec::new);
    for (j, o) in outcomes.into_iter().enumerate() {
        let (x, traj) = o?;
        draws.set_column(j, &x);
        if let (Some(all), Some(t)) = (trajectories.as_mut(), traj) {
            all.push(t);
        }
    }
    Ok(DpsRunResult {
        draws,
        trajectories,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{build_operator, OperatorKind, OperatorSpec};
    use crate::rng::stream;

    fn identity_model(d: usize, sigma: f64) -> ForwardModel {
        ForwardModel::from_spec(OperatorSpec::Identity { d }).unwrap().with_noise(sigma).unwrap()
    }

    fn normals(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = stream(seed, &[]);
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn dpnp_schedule_shape() {
        let etas = dpnp_schedule(100.0, 0.15, 40);
        assert_eq!(etas.len(), 40);
        assert!(etas[..8].iter().all(|&e| e == 100.0));
        assert!((etas[39] - 0.15).abs() < 1e-12);
        for i in 8..40 {
            assert!(etas[i] < etas[i - 1]);
        }
        // geometric: constant log-decrement after the hold
        let r1 = etas[9] / etas[8];
        let r2 = etas[30] / etas[29];
        assert!((r1 - r2).abs() < 1e-12);
    }

    #[test]
    fn cdps_without_guidance_is_ancestral() {
        let s = DiffusionSchedule::new(10, 1e-3, 0.1).unwrap();
        let model = identity_model(3, 0.1);
        let x = normals(3, 1);
        let draws = DMatrix::from_fn(3, 4, |i, j| (i + j) as f64 * 0.1);
        let y = normals(3, 2);
        let z = normals(3, 3);
        let t = 6;
        let input = StepInput { t, x_t: &x, draws: &draws, y: &y, model: &model, z: &z };
        let out = cdps_step(&input, &s, 0.0, CdpsGuidance::Constant).unwrap();
        let ab = s.alpha_bar(t);
        let abp = s.alpha_bar(t - 1);
        let x0 = draws.column_mean();
        let mean = &x * (ab.sqrt() * s.alpha(t).sqrt() * (1.0 - abp) / (1.0 - ab)) + &x0 * (abp.sqrt() * s.beta(t) / (1.0 - ab));
        let var = s.beta(t) * (1.0 - abp) / (1.0 - ab);
        let expected = (mean + &z * var.sqrt()) / abp.sqrt();
        assert!((out - expected).amax() < 1e-12);
    }

    #[test]
    fn cdps_guidance_vanishes_on_consistent_data() {
        let s = DiffusionSchedule::new(10, 1e-3, 0.1).unwrap();
        let model = identity_model(3, 0.1);
        let x = normals(3, 1);
        let draws = DMatrix::from_fn(3, 5, |i, j| ((i * 3 + j * 7) % 5) as f64);
        let y = draws.column_mean();
        let z = normals(3, 3);
        let input = StepInput { t: 4, x_t: &x, draws: &draws, y: &y, model: &model, z: &z };
        let a = cdps_step(&input, &s, 0.0, CdpsGuidance::Constant).unwrap();
        let b = cdps_step(&input, &s, 5.0, CdpsGuidance::ResidualNormalized).unwrap();
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn proximal_limits_and_optimality() {
        let mut rng = stream(4, &[]);
        let model = build_operator(OperatorKind::Convolution, 16, &mut rng).unwrap().with_noise(0.1).unwrap();
        let y = normals(16, 5);
        let x0 = normals(16, 6);
        for rho in [1e-3, 0.5, 20.0] {
            let x = data_proximal(&model, &y, &x0, rho).unwrap();
            let grad = model.adjoint((model.apply(x.as_slice()).unwrap() - &y).as_slice()).unwrap() + (&x - &x0) * rho;
            assert!(grad.amax() < 1e-8);
        }
        let id = identity_model(16, 0.1);
        assert!((data_proximal(&id, &y, &x0, 1e12).unwrap() - &x0).amax() < 1e-9);
        assert!((data_proximal(&id, &y, &x0, 1e-12).unwrap() - &y).amax() < 1e-9);
    }

    #[test]
    fn dpnp_two_gaussian_product() {
        let model = identity_model(2, 1.0);
        let y = DVector::from_vec(vec![1.0, -2.0]);
        let draws = DMatrix::from_column_slice(2, 1, &[3.0, 0.0]);
        let x = DVector::zeros(2);
        let mut rng = stream(7, &[]);
        let n = 100_000;
        let mut acc = DMatrix::zeros(2, n);
        for j in 0..n {
            let z = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let input = StepInput { t: 1, x_t: &x, draws: &draws, y: &y, model: &model, z: &z };
            acc.set_column(j, &dpnp_step(&input, 1.0, 1.0, true).unwrap());
        }
        let (m, c) = crate::linalg::sample_covariance(&acc);
        assert!((m[0] - 2.0).abs() < 0.02 && (m[1] + 1.0).abs() < 0.02);
        assert!((c[(0, 0)] - 0.5).abs() < 0.01 && (c[(1, 1)] - 0.5).abs() < 0.01);
    }

    #[test]
    fn dpnp_limits() {
        let model = identity_model(2, 0.3);
        let y = DVector::from_vec(vec![1.0, -2.0]);
        let draws = DMatrix::from_column_slice(2, 1, &[3.0, 0.5]);
        let x = DVector::zeros(2);
        let z = normals(2, 8);
        let input = StepInput { t: 1, x_t: &x, draws: &draws, y: &y, model: &model, z: &z };
        let out = dpnp_step(&input, 1e-9, 0.3, true).unwrap();
        assert!((out - draws.column(0)).amax() < 1e-6);
        // no data: A = 0 via an empty imputation mask
        let empty = ForwardModel::from_spec(OperatorSpec::Imputation { d: 2, kept: vec![] }).unwrap().with_noise(0.3).unwrap();
        let y0 = DVector::zeros(0);
        let input = StepInput { t: 1, x_t: &x, draws: &draws, y: &y0, model: &empty, z: &z };
        let out = dpnp_step(&input, 2.0, 0.3, true).unwrap();
        assert!((out - (draws.column(0) + &z * 2.0)).amax() < 1e-12);
    }

    #[test]
    fn diffpir_last_step_returns_proximal_point() {
        let s = DiffusionSchedule::new(5, 1e-2, 0.2).unwrap();
        let model = identity_model(3, 0.2);
        let x = normals(3, 1);
        let draws = DMatrix::from_fn(3, 3, |i, j| (i * j) as f64);
        let y = normals(3, 2);
        let z = normals(3, 3);
        let input = StepInput { t: 1, x_t: &x, draws: &draws, y: &y, model: &model, z: &z };
        let out = diffpir_step(&input, &s, 1.0, 0.3).unwrap();
        let rho = 0.04 / s.sigma2(1);
        let prox = data_proximal(&model, &y, &draws.column_mean(), rho).unwrap();
        assert!((out - prox).amax() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(DpsAlgorithm::Cdps { zeta: 0.0 }.validate().is_err());
        assert!(DpsAlgorithm::DiffPir { lambda: 1.0, zeta: 1.5 }.validate().is_err());
        assert!(DpsAlgorithm::Dpnp { eta_initial: 1.0, eta_final: 0.15, iterations: 42 }.validate().is_err());
        let r = StepRegistry::default();
        let cfg = DpsConfig::new(DpsAlgorithm::Custom { name: "nope".into(), params: BTreeMap::new() }, DiffusionSchedule::standard());
        assert!(r.build(&cfg).is_err());
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["cdps", "diffpir", "dpnp"]);
    }

    #[test]
    fn algorithm_serde() {
        let a = DpsAlgorithm::DiffPir { lambda: 0.5, zeta: 0.3 };
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, r#"{"algorithm":"diffpir","lambda":0.5,"zeta":0.3}"#);
        let b: DpsAlgorithm = serde_json::from_str(r#"{"algorithm":"dpnp","eta_initial":10.0}"#).unwrap();
        assert_eq!(b, DpsAlgorithm::Dpnp { eta_initial: 10.0, eta_final: 0.15, iterations: 40 });
    }
}
