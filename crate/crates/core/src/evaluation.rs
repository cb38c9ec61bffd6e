//! Scoring: MMSE optimality gap, HPD coverage, the Wilcoxon signed-rank test,
//! one-dimensional distances, and the chain-length diagnostics used to pick
//! the oracle denoiser's burn-in and sample count.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{dims, domain, Error, Result};
use crate::gibbs::{ChainSettings, Likelihood, PosteriorSampler};
use crate::levy::{log_prior, synthesize_signal, JumpLaw, Signal};
use crate::rng::{purpose, stream};

/// Jump index monitored by the burn-in diagnostic (`x[32] - x[31]`, 0-based).
pub const MONITORED_JUMP: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub operator: String,
    pub law: String,
    pub method: String,
    pub item: usize,
    pub gap_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub alpha: f64,
    pub covered: Vec<bool>,
    pub coverage: f64,
}

/// `10 log10(|est - truth|^2 / |gold - truth|^2)`.
pub fn mmse_gap_db(est_mean: &Signal, gold_mean: &Signal, truth: &Signal) -> Result<f64> {
    if est_mean.len() != truth.len() || gold_mean.len() != truth.len() {
        return Err(dims("gap inputs must share one length"));
    }
    let gold = (gold_mean - truth).norm_squared();
    if gold == 0.0 {
        return Err(Error::DegenerateReference("gold-standard estimate equals the truth".into()));
    }
    let est = (est_mean - truth).norm_squared();
    Ok(10.0 * (est / gold).log10())
}

/// Ground-truth log-posterior up to a constant: likelihood plus prior.
pub fn log_posterior(law: &JumpLaw, lik: &Likelihood, x: &[f64]) -> f64 {
    lik.log_likelihood(x) + log_prior(law, x)
}

/// Empirical HPD threshold: the `ceil(alpha N)`-th largest value (1-based),
/// ties kept in sample order.
pub fn hpd_threshold(log_post: &[f64], alpha: f64) -> Result<f64> {
    if log_post.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut order: Vec<usize> = (0..log_post.len()).collect();
    order.sort_by(|&i, &j| log_post[j].total_cmp(&log_post[i]).then(i.cmp(&j)));
    let n = log_post.len();
    let k = ((alpha * n as f64).ceil() as usize).clamp(1, n);
    Ok(log_post[order[k - 1]])
}

/// HPD coverage over test items. `samples[i]` holds the draws for item `i`
/// as columns; `log_post(i, x)` is the item's unnormalized log-posterior.
pub fn hpd_coverage<F>(samples: &[DMatrix<f64>], truths: &[Signal], log_post: F, alpha: f64) -> Result<CoverageRecord>
where
    F: Fn(usize, &[f64]) -> f64,
{
    if samples.len() != truths.len() {
        return Err(dims(format!("{} sample sets for {} truths", samples.len(), truths.len())));
    }
    if samples.is_empty() {
        return Err(domain("coverage needs at least one test item"));
    }
    let mut covered = Vec::with_capacity(samples.len());
    for (i, (draws, truth)) in samples.iter().zip(truths).enumerate() {
        let values: Vec<f64> = draws.column_iter().map(|c| log_post(i, c.as_slice())).collect();
        let threshold = hpd_threshold(&values, alpha)?;
        covered.push(log_post(i, truth.as_slice()) >= threshold);
    }
    let coverage = covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64;
    Ok(CoverageRecord {
        alpha,
        covered,
        coverage,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub w_plus: f64,
    /// Pairs left after dropping zero differences.
    pub n_used: usize,
    pub z: f64,
    pub p_two_sided: f64,
    pub median_diff: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Two-sided signed-rank test: zero differences dropped, tied ranks
/// averaged, normal approximation with tie-corrected variance and continuity
/// correction.
pub fn wilcoxon_signed_rank(differences: &[f64]) -> Result<WilcoxonResult> {
    if differences.iter().any(|d| !d.is_finite()) {
        return Err(domain("differences must be finite"));
    }
    let median_diff = median(differences);
    let nz: Vec<f64> = differences.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            w_plus: 0.0,
            n_used: 0,
            z: 0.0,
            p_two_sided: 1.0,
            median_diff,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| nz[i].abs().total_cmp(&nz[j].abs()));
    let mut ranks = vec![0.0; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nz[order[j + 1]].abs() == nz[order[i]].abs() {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let w_plus: f64 = (0..n).filter(|&k| nz[k] > 0.0).map(|k| ranks[k]).sum();
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let (z, p) = if var <= 0.0 {
        (0.0, 1.0)
    } else {
        let dev = ((w_plus - mean).abs() - 0.5).max(0.0);
        let z = dev / var.sqrt() * (w_plus - mean).signum();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (z, (2.0 * normal.sf(z.abs())).min(1.0))
    };
    Ok(WilcoxonResult {
        w_plus,
        n_used: n,
        z,
        p_two_sided: p,
        median_diff,
    })
}

/// Wasserstein-1 distance between two empirical distributions, as the
/// integral of the absolute difference of their quantile functions. For equal
/// sizes this is the mean absolute difference of the sorted samples.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    if sa.len() == sb.len() {
        let total: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum();
        return Ok(total / sa.len() as f64);
    }
    let (na, nb) = (sa.len(), sb.len());
    let (mut i, mut j) = (0, 0);
    let mut pos = 0.0;
    let mut total = 0.0;
    // walk the merged quantile breakpoints k/na and l/nb exactly in integer form
    while i < na && j < nb {
        let next_a = (i + 1) as f64 / na as f64;
        let next_b = (j + 1) as f64 / nb as f64;
        let (next, step_a, step_b) = match ((i + 1) * nb).cmp(&((j + 1) * na)) {
            std::cmp::Ordering::Less => (next_a, true, false),
            std::cmp::Ordering::Greater => (next_b, false, true),
            std::cmp::Ordering::Equal => (next_a, true, true),
        };
        total += (next - pos) * (sa[i] - sb[j]).abs();
        pos = next;
        if step_a {
            i += 1;
        }
        if step_b {
            j += 1;
        }
    }
    Ok(total)
}

/// Kolmogorov-Smirnov distance `sup |F_n - F|`.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut worst: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        worst = worst.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    Ok(worst)
}

/// Settings of the chain-length diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSettings {
    pub d: usize,
    pub chains: usize,
    /// Total iterations per chain.
    pub iterations: usize,
    /// Trailing iterations forming the reference.
    pub n_avg: usize,
}

impl DiagnosticSettings {
    pub const DESK: Self = Self {
        d: 64,
        chains: 200,
        iterations: 2000,
        n_avg: 1000,
    };
    pub const PAPER: Self = Self {
        d: 64,
        chains: 1000,
        iterations: 4000,
        n_avg: 2000,
    };
}

/// Chains started at zero on one fixed denoising problem.
#[derive(Debug, Clone)]
pub struct DiagnosticChains {
    pub settings: DiagnosticSettings,
    pub sigma: f64,
    pub truth: Signal,
    pub y: Signal,
    /// Monitored jump per iteration (rows) and chain (columns).
    pub jumps: DMatrix<f64>,
    /// Every iterate of chain 0 as columns.
    pub first_chain: DMatrix<f64>,
    /// Mean over the last `n_avg` iterations of all chains.
    pub reference_mean: Signal,
}

pub fn run_diagnostic_chains(law: &JumpLaw, sigma: f64, settings: DiagnosticSettings, seed: u64) -> Result<DiagnosticChains> {
    let s = settings;
    if s.d <= MONITORED_JUMP {
        return Err(dims(format!("diagnostics need d >= {}, got {}", MONITORED_JUMP + 1, s.d)));
    }
    if s.chains == 0 || s.n_avg == 0 || s.n_avg > s.iterations {
        return Err(domain("diagnostics need chains >= 1 and 1 <= n_avg <= iterations"));
    }
    let mut rng = stream(seed, &[purpose::DIAGNOSTIC]);
    let truth = synthesize_signal(law, s.d, &mut rng)?;
    let y = DVector::from_fn(s.d, |i, _| truth[i] + sigma * rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal));
    let lik = Likelihood::denoising(&y, sigma)?;
    let sampler = PosteriorSampler::new(law, &lik)?;
    let chain_settings = ChainSettings {
        burn_in: 0,
        samples: s.iterations,
    };
    let init = vec![0.0; s.d];
    let start_avg = s.iterations - s.n_avg;

    let run = |c: usize| -> Result<(Vec<f64>, DVector<f64>, Option<Vec<f64>>)> {
        let mut rng = stream(seed, &[purpose::DIAGNOSTIC, 1, c as u64]);
        let mut jumps = Vec::with_capacity(s.iterations);
        let mut sum = DVector::zeros(s.d);
        let mut keep = (c == 0).then(|| Vec::with_capacity(s.d * s.iterations));
        let mut it = 0;
        sampler.run(chain_settings, &init, &mut rng, |x| {
            jumps.push(x[MONITORED_JUMP] - x[MONITORED_JUMP - 1]);
            if it >= start_avg {
                for (acc, v) in sum.iter_mut().zip(x) {
                    *acc += v;
                }
            }
            if let Some(k) = keep.as_mut() {
                k.extend_from_slice(x);
            }
            it += 1;
        })?;
        Ok((jumps, sum, keep))
    };
    #[cfg(feature = "parallel")]
    let outcomes: Vec<_> = {
        use rayon::prelude::*;
        (0..s.chains).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<_> = (0..s.chains).map(run).collect();

    let mut jumps = DMatrix::zeros(s.iterations, s.chains);
    let mut total = DVector::zeros(s.d);
    let mut first_chain = DMatrix::zeros(s.d, 0);
    for (c, o) in outcomes.into_iter().enumerate() {
        let (j, sum, keep) = o?;
        jumps.set_column(c, &DVector::from_vec(j));
        total += sum;
        if let Some(k) = keep {
            first_chain = DMatrix::from_vec(s.d, s.iterations, k);
        }
    }
    Ok(DiagnosticChains {
        settings: s,
        sigma,
        truth,
        y,
        jumps,
        first_chain,
        reference_mean: total / (s.n_avg * s.chains) as f64,
    })
}

/// W1 between the pooled monitored jumps in iterations `[i, i + window)` and
/// the reference (last `n_avg` iterations), for every window start `i`.
pub fn burn_in_trace(chains: &DiagnosticChains, window: usize) -> Result<Vec<f64>> {
    let s = chains.settings;
    if window == 0 || window > s.iterations {
        return Err(domain(format!("window must lie in 1..={}", s.iterations)));
    }
    let pooled = |from: usize, len: usize| -> Vec<f64> {
        chains.jumps.rows(from, len).iter().copied().collect()
    };
    let reference = pooled(s.iterations - s.n_avg, s.n_avg);
    (0..=s.iterations - window)
        .map(|i| wasserstein1_1d(&pooled(i, window), &reference))
        .collect()
}

/// Runs the chains and returns the burn-in trace.
pub fn burn_in_diagnostic(law: &JumpLaw, sigma: f64, settings: DiagnosticSettings, window: usize, seed: u64) -> Result<Vec<f64>> {
    burn_in_trace(&run_diagnostic_chains(law, sigma, settings, seed)?, window)
}

/// First iteration (1-based) at which the trace drops to its noise floor,
/// taken as the 95th percentile of the trace over its second half.
pub fn plateau_iteration(trace: &[f64]) -> Option<usize> {
    if trace.len() < 2 {
        return None;
    }
    let mut tail = trace[trace.len() / 2..].to_vec();
    tail.sort_by(f64::total_cmp);
    let level = tail[((tail.len() as f64 * 0.95).ceil() as usize).clamp(1, tail.len()) - 1];
    trace.iter().position(|&v| v <= level).map(|i| i + 1)
}

/// Sliding-window length used for the burn-in trace unless configured otherwise.
pub const BURN_IN_WINDOW: usize = 1;

/// Plateau of a burn-in trace judged only on windows that end before the
/// reference block; later windows overlap the reference and decay to zero
/// for reasons unrelated to burn-in.
pub fn burn_in_plateau(settings: DiagnosticSettings, trace: &[f64], window: usize) -> Option<usize> {
    let before = (settings.iterations - settings.n_avg + 1).checked_sub(window)?;
    plateau_iteration(&trace[..before.min(trace.len())])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCountResult {
    pub window: usize,
    pub reached: bool,
    /// Normalized MSE for window lengths `1..=n_avg`.
    pub mse: Vec<f64>,
}

/// Grows a window leftwards from the last iteration of chain 0 and reports
/// the first length whose windowed mean is within `tol` of the reference
/// mean, in MSE per entry normalized by `sigma^2`.
pub fn sample_count_from_chains(chains: &DiagnosticChains, tol: f64) -> SampleCountResult {
    let s = chains.settings;
    let d = s.d as f64;
    let mut sum = DVector::zeros(s.d);
    let mut mse = Vec::with_capacity(s.n_avg);
    for len in 1..=s.n_avg {
        sum += chains.first_chain.column(s.iterations - len);
        let err = (&sum / len as f64 - &chains.reference_mean).norm_squared() / d;
        mse.push(err / (chains.sigma * chains.sigma));
    }
    match mse.iter().position(|&v| v < tol) {
        Some(i) => SampleCountResult {
            window: i + 1,
            reached: true,
            mse,
        },
        None => SampleCountResult {
            window: s.n_avg,
            reached: false,
            mse,
        },
    }
}

/// Runs the chains and returns the minimal averaging window.
pub fn sample_count_diagnostic(law: &JumpLaw, sigma: f64, settings: DiagnosticSettings, tol: f64, seed: u64) -> Result<SampleCountResult> {
    Ok(sample_count_from_chains(&run_diagnostic_chains(law, sigma, settings, seed)?, tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_identities() {
        let truth = DVector::from_vec(vec![1.0, 2.0]);
        let gold = DVector::from_vec(vec![1.1, 2.0]);
        let est = DVector::from_vec(vec![2.0, 2.0]);
        assert_eq!(mmse_gap_db(&gold, &gold, &truth).unwrap(), 0.0);
        assert!((mmse_gap_db(&est, &gold, &truth).unwrap() - 20.0).abs() < 1e-9);
        assert!(matches!(mmse_gap_db(&est, &truth, &truth), Err(Error::DegenerateReference(_))));
    }

    #[test]
    fn hpd_threshold_index() {
        let v: Vec<f64> = (0..50).map(|i| i as f64).collect();
        // descending: 49, 48, ...; the 45th value is 5
        assert_eq!(hpd_threshold(&v, 0.9).unwrap(), 5.0);
        assert_eq!(hpd_threshold(&[3.0], 0.9).unwrap(), 3.0);
    }

    #[test]
    fn coverage_extremes() {
        // identical low-density samples: every truth scores above them
        let draws = vec![DMatrix::from_element(1, 10, 5.0)];
        let truths = vec![DVector::from_element(1, 0.0)];
        let lp = |_: usize, x: &[f64]| -0.5 * x[0] * x[0];
        assert_eq!(hpd_coverage(&draws, &truths, lp, 0.9).unwrap().coverage, 1.0);
        // samples at the mode, truth in the tail
        let draws = vec![DMatrix::from_element(1, 10, 0.0)];
        let truths = vec![DVector::from_element(1, 4.0)];
        assert_eq!(hpd_coverage(&draws, &truths, lp, 0.9).unwrap().coverage, 0.0);
    }

    #[test]
    fn wilcoxon_examples() {
        let anti: Vec<f64> = (1..=5).flat_map(|k| [k as f64, -(k as f64)]).collect();
        assert!(wilcoxon_signed_rank(&anti).unwrap().p_two_sided > 0.9);
        let pos: Vec<f64> = (1..=50).map(|k| k as f64 * 0.1).collect();
        let r = wilcoxon_signed_rank(&pos).unwrap();
        assert!(r.p_two_sided < 1e-8);
        let neg: Vec<f64> = pos.iter().map(|v| -v).collect();
        let s = wilcoxon_signed_rank(&neg).unwrap();
        assert!((r.p_two_sided - s.p_two_sided).abs() < 1e-15);
        assert_eq!(r.median_diff, -s.median_diff);
        assert_eq!(wilcoxon_signed_rank(&[0.0; 12]).unwrap().p_two_sided, 1.0);
    }

    #[test]
    fn wilcoxon_antisymmetric_matches_enumeration() {
        // pairs (+a, -a) for a = 1..5: tied ranks 1.5, 3.5, ..., 9.5 each twice;
        // exact null distribution of W+ by enumerating all 2^10 sign patterns
        let diffs: Vec<f64> = (1..=5).flat_map(|k| [k as f64, -(k as f64)]).collect();
        let ranks: Vec<f64> = (0..10).map(|i| (i / 2) as f64 * 2.0 + 1.5).collect();
        let r = wilcoxon_signed_rank(&diffs).unwrap();
        let mean = 27.5;
        let mut extreme = 0;
        for mask in 0u32..1024 {
            let w: f64 = (0..10).filter(|b| mask >> b & 1 == 1).map(|b| ranks[b]).sum();
            if (w - mean).abs() >= (r.w_plus - mean).abs() - 1e-12 {
                extreme += 1;
            }
        }
        let exact = extreme as f64 / 1024.0;
        assert!(exact > 0.9);
        assert!(r.p_two_sided > 0.9);
        // a one-sided pattern agrees with the exact tail to normal-approximation accuracy
        let skew: Vec<f64> = (1..=10).map(|k| if k <= 8 { k as f64 } else { -(k as f64) }).collect();
        let r = wilcoxon_signed_rank(&skew).unwrap();
        let mut extreme = 0;
        for mask in 0u32..1024 {
            let w: u32 = (0..10).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).sum();
            if (w as f64 - mean).abs() >= (r.w_plus - mean).abs() {
                extreme += 1;
            }
        }
        assert!((r.p_two_sided - extreme as f64 / 1024.0).abs() < 0.02);
    }

    #[test]
    fn w1_examples() {
        assert_eq!(wasserstein1_1d(&[1.0, 3.0, 2.0], &[3.0, 2.0, 1.0]).unwrap(), 0.0);
        assert_eq!(wasserstein1_1d(&[0.0; 4], &[2.5; 4]).unwrap(), 2.5);
        assert!((wasserstein1_1d(&[0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        let a = [0.3, -1.2, 4.0, 0.0, 2.2];
        let b: Vec<f64> = a.iter().map(|v| v - 0.7).collect();
        assert!((wasserstein1_1d(&a, &b).unwrap() - 0.7).abs() < 1e-12);
        assert!(wasserstein1_1d(&[], &[1.0]).is_err());
        // unequal sizes agree with replicating to a common size
        let x = [0.0, 1.0, 5.0];
        let y = [2.0, 3.0];
        let xx: Vec<f64> = x.iter().flat_map(|&v| [v, v]).collect();
        let yy: Vec<f64> = y.iter().flat_map(|&v| [v, v, v]).collect();
        assert!((wasserstein1_1d(&x, &y).unwrap() - wasserstein1_1d(&xx, &yy).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ks_examples() {
        let std = Normal::new(0.0, 1.0).unwrap();
        assert_eq!(ks_distance(&[0.0], |x| std.cdf(x)).unwrap(), 0.5);
        let mut rng = stream(11, &[]);
        let s: Vec<f64> = (0..10_000).map(|_| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal)).collect();
        assert!(ks_distance(&s, |x| std.cdf(x)).unwrap() <= 0.02);
        let t: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        let a = ks_distance(&s, |x| std.cdf(x)).unwrap();
        let b = ks_distance(&t, |x| std.cdf(x.ln())).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn diagnostics_small() {
        let law = JumpLaw::student_t(1.0).unwrap();
        let settings = DiagnosticSettings {
            d: 40,
            chains: 20,
            iterations: 300,
            n_avg: 150,
        };
        let chains = run_diagnostic_chains(&law, 0.5, settings, 3).unwrap();
        let trace = burn_in_trace(&chains, settings.n_avg).unwrap();
        assert_eq!(*trace.last().unwrap(), 0.0);
        assert!(trace[0] > 0.0);
        let short = burn_in_trace(&chains, 5).unwrap();
        assert_eq!(short.len(), 296);
        assert!(burn_in_plateau(settings, &short, 5).is_some_and(|p| p <= 146));
        assert_eq!(burn_in_plateau(settings, &short, 151), None);
        let inf = sample_count_from_chains(&chains, f64::INFINITY);
        assert_eq!(inf.window, 1);
        let loose = sample_count_from_chains(&chains, 0.1);
        let tight = sample_count_from_chains(&chains, 0.01);
        assert!(tight.window >= loose.window);
        assert!(run_diagnostic_chains(&law, 0.5, DiagnosticSettings { d: 32, ..settings }, 3).is_err());
    }
}
