//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers and strings and returns a flat
//! `Float64Array` so the page needs no generated glue beyond wasm-bindgen.

use dpsbench::diffusion::{ddpm_prior_sample, DiffusionSchedule, OracleDenoiser};
use dpsbench::gibbs::{sample_posterior, ChainSettings, Likelihood};
use dpsbench::levy::{synthesize_signal, JumpLaw};
use dpsbench::rng::stream;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use wasm_bindgen::prelude::*;

/// Upper bounds that keep a single call responsive in the browser.
pub const MAX_D: usize = 512;
pub const MAX_STEPS: usize = 1000;
pub const MAX_SAMPLES: usize = 20_000;

fn law(spec: &str) -> Result<JumpLaw, String> {
    spec.parse().map_err(|e| format!("{e}"))
}

fn check(name: &str, value: usize, max: usize) -> Result<(), String> {
    if value == 0 || value > max {
        return Err(format!("{name} must be in 1..={max}, got {value}"));
    }
    Ok(())
}

/// A Levy signal followed by the same signal plus white noise of level
/// `sigma`: `[x (d values), y (d values)]`.
pub fn signal_and_measurement(law_spec: &str, d: usize, sigma: f64, seed: u64) -> Result<Vec<f64>, String> {
    check("d", d, MAX_D)?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(format!("noise level must be non-negative, got {sigma}"));
    }
    let law = law(law_spec)?;
    let mut rng = stream(seed, &[0]);
    let x = synthesize_signal(&law, d, &mut rng).map_err(|e| e.to_string())?;
    let mut rng = stream(seed, &[1]);
    let y: Vec<f64> = x.iter().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(x.iter().copied().chain(y).collect())
}

/// Gibbs posterior for denoising `y`: `[mean, lower, upper]` where the bounds
/// are the pointwise 5% and 95% quantiles of the draws.
pub fn gibbs_denoise(law_spec: &str, y: &[f64], sigma: f64, burn_in: usize, samples: usize, seed: u64) -> Result<Vec<f64>, String> {
    check("d", y.len(), MAX_D)?;
    check("samples", samples, MAX_SAMPLES)?;
    let law = law(law_spec)?;
    let y = DVector::from_column_slice(y);
    let lik = Likelihood::denoising(&y, sigma).map_err(|e| e.to_string())?;
    let settings = ChainSettings { burn_in, samples };
    let chain = sample_posterior(&law, &lik, settings, y.as_slice(), &mut stream(seed, &[2])).map_err(|e| e.to_string())?;
    let d = y.len();
    let mut out = vec![0.0; 3 * d];
    for i in 0..d {
        let mut row: Vec<f64> = chain.draws.row(i).iter().copied().collect();
        out[i] = row.iter().sum::<f64>() / samples as f64;
        row.sort_by(f64::total_cmp);
        let q = |p: f64| row[((p * (samples - 1) as f64).round() as usize).min(samples - 1)];
        out[d + i] = q(0.05);
        out[2 * d + i] = q(0.95);
    }
    Ok(out)
}

/// One unconditional reverse-diffusion sample driven by the exact denoiser.
pub fn oracle_prior_sample(law_spec: &str, d: usize, steps: usize, denoiser_samples: usize, seed: u64) -> Result<Vec<f64>, String> {
    check("d", d, MAX_D)?;
    check("steps", steps, MAX_STEPS)?;
    check("denoiser samples", denoiser_samples, MAX_SAMPLES)?;
    let law = law(law_spec)?;
    let schedule = if steps > 50 {
        DiffusionSchedule::rescaled(steps)
    } else {
        DiffusionSchedule::new(steps, 5e-3, 0.2)
    }
    .map_err(|e| e.to_string())?;
    let denoiser = OracleDenoiser::new(law).with_burn_in(30);
    let x = ddpm_prior_sample(&denoiser, &schedule, d, denoiser_samples, &mut stream(seed, &[3])).map_err(|e| e.to_string())?;
    Ok(x.as_slice().to_vec())
}

#[wasm_bindgen]
pub fn synthesize(law_spec: &str, d: usize, sigma: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    signal_and_measurement(law_spec, d, sigma, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn denoise(law_spec: &str, y: &[f64], sigma: f64, burn_in: usize, samples: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    gibbs_denoise(law_spec, y, sigma, burn_in, samples, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn prior_sample(law_spec: &str, d: usize, steps: usize, denoiser_samples: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    oracle_prior_sample(law_spec, d, steps, denoiser_samples, seed).map_err(|e| JsError::new(&e))
}
