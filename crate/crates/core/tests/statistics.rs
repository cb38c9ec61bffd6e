use std::sync::Arc;

use dpsbench::baselines::{solve_l1, solve_l2, tune_dps, tune_lambda, LoglinearSpec, TuningGrid, L1_TOL};
use dpsbench::diffusion::{ddpm_prior_sample, DiffusionSchedule, OracleDenoiser};
use dpsbench::dps::{DpsAlgorithm, DpsConfig, StepRegistry};
use dpsbench::evaluation::{ks_distance, wilcoxon_signed_rank};
use dpsbench::forward::{build_operator, calibrate_noise, synthesize_measurement, Measurement, OperatorKind};
use dpsbench::gibbs::glm::gaussian_posterior;
use dpsbench::gibbs::Likelihood;
use dpsbench::levy::{apply_d, synthesize_signal, JumpLaw};
use dpsbench::rng::stream;
use rand::Rng;

fn dataset(law: &JumpLaw, kind: OperatorKind, d: usize, items: usize, seed: u64) -> Vec<Measurement> {
    let mut r = stream(seed, &[0]);
    let model = build_operator(kind, d, &mut r).unwrap();
    let calib: Vec<_> = (0..200).map(|_| synthesize_signal(law, d, &mut r).unwrap()).collect();
    let sigma = calibrate_noise(&model, &calib, 25.0).unwrap();
    let model = Arc::new(model.with_noise(sigma).unwrap());
    (0..items)
        .map(|i| {
            let mut r = stream(seed, &[1, i as u64]);
            let x = synthesize_signal(law, d, &mut r).unwrap();
            synthesize_measurement(&model, &x, &mut r).unwrap()
        })
        .collect()
}

#[test]
fn l2_at_the_conjugate_weight_is_the_posterior_mean() {
    for kind in OperatorKind::ALL {
        let m = &dataset(&JumpLaw::gauss(0.25).unwrap(), kind, 32, 1, 3)[0];
        let sigma = m.model.noise().unwrap();
        let x = solve_l2(&m.y, &m.model, sigma * sigma / (2.0 * 0.25)).unwrap();
        let lik = Likelihood::from_model(&m.model, &m.y).unwrap();
        let (mean, _) = gaussian_posterior(&lik, 0.25).unwrap();
        assert!((&x - &mean).norm() <= 1e-9 * mean.norm(), "{kind:?}");
    }
}

#[test]
fn tuned_l2_weight_lands_on_the_conjugate_optimum() {
    let var = 0.25;
    let validation = dataset(&JumpLaw::gauss(var).unwrap(), OperatorKind::Identity, 64, 400, 11);
    let sigma = validation[0].model.noise().unwrap();
    let target = sigma * sigma / (2.0 * var);
    let full = TuningGrid::loglinear(LoglinearSpec::L2_L1).unwrap();
    let step = (full.points[1] / full.points[0]).log10();
    let near: Vec<f64> = full.points.iter().copied().filter(|p| (p / target).log10().abs() < 0.3).collect();
    let grid = TuningGrid::from_points(near).unwrap();
    let tuned = tune_lambda(|m, l| solve_l2(&m.y, &m.model, l), &validation, &grid).unwrap();
    let off = (tuned.best_point() / target).log10().abs();
    assert!(off <= step, "tuned {} vs {target}: {off} decades", tuned.best_point());

    let again = tune_lambda(|m, l| solve_l2(&m.y, &m.model, l), &validation, &grid).unwrap();
    assert_eq!(tuned.mse.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), again.mse.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn l1_tuning_is_reproducible() {
    let validation = dataset(&JumpLaw::laplace(1.0).unwrap(), OperatorKind::Convolution, 24, 6, 12);
    let grid = TuningGrid::from_points(vec![1e-2, 3e-2, 0.1, 0.3]).unwrap();
    let run = || tune_lambda(|m, l| solve_l1(&m.y, &m.model, l, L1_TOL), &validation, &grid).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.best, b.best);
    assert!(a.mse.iter().zip(&b.mse).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.failures, 0);
}

#[test]
fn dps_tuning_over_one_point_is_deterministic() {
    let law = JumpLaw::gauss(0.25).unwrap();
    let validation = dataset(&law, OperatorKind::Identity, 16, 3, 13);
    let denoiser = OracleDenoiser::new(law).with_burn_in(10);
    let mut template = DpsConfig::new(DpsAlgorithm::Cdps { zeta: 1.0 }, DiffusionSchedule::new(20, 5e-3, 0.2).unwrap()).with_samples(3);
    template.denoiser_samples = 20;
    let grid = [DpsAlgorithm::DiffPir { lambda: 2.0, zeta: 0.3 }];
    let registry = StepRegistry::default();
    let a = tune_dps(&template, &grid, &validation, &registry, &denoiser, 5).unwrap();
    let b = tune_dps(&template, &grid, &validation, &registry, &denoiser, 5).unwrap();
    assert_eq!(a.best_point(), grid[0]);
    assert_eq!(a.mse[0].to_bits(), b.mse[0].to_bits());
    assert!(a.mse[0].is_finite());
}

#[test]
fn wilcoxon_p_values_are_uniform_under_the_null() {
    let mut rng = stream(21, &[]);
    let p: Vec<f64> = (0..1000)
        .map(|_| {
            let diffs: Vec<f64> = (0..50).map(|_| rng.random::<f64>() - 0.5).collect();
            wilcoxon_signed_rank(&diffs).unwrap().p_two_sided
        })
        .collect();
    let ks = ks_distance(&p, |x| x.clamp(0.0, 1.0)).unwrap();
    assert!(ks <= 0.06, "KS {ks}");
}

fn pooled_jumps_of_prior_samples(law: JumpLaw, d: usize, n: usize, seed: u64) -> Vec<f64> {
    let schedule = DiffusionSchedule::rescaled(100).unwrap();
    let denoiser = OracleDenoiser::new(law).with_burn_in(30);
    let mut rng = stream(seed, &[]);
    (0..n)
        .flat_map(|_| {
            let x = ddpm_prior_sample(&denoiser, &schedule, d, 100, &mut rng).unwrap();
            apply_d(x.as_slice()).iter().copied().collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn oracle_ddpm_reproduces_jump_marginals() {
    for (law, seed) in [
        (JumpLaw::gauss(0.25).unwrap(), 31),
        (JumpLaw::laplace(1.0).unwrap(), 32),
        (JumpLaw::student_t(3.0).unwrap(), 33),
    ] {
        let jumps = pooled_jumps_of_prior_samples(law, 16, 250, seed);
        let u = law.univariate();
        let ks = ks_distance(&jumps, |x| u.cdf(x)).unwrap();
        assert!(ks <= 0.05, "{law:?}: KS {ks}");
    }
}
