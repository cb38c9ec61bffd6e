//! Model-based estimators with quadratic and total-variation regularization,
//! and grid-search tuning for them and for the DPS parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diffusion::Denoiser;
use crate::dps::{run_dps, DpsAlgorithm, DpsConfig, StepRegistry, DPNP_ETA_FINAL, DPNP_ITERATIONS};
use crate::error::{domain, Error, Result};
use crate::forward::{ForwardModel, Measurement};
use crate::levy::{apply_d, apply_d_transpose, Signal};
use crate::rng::{derive_seed, purpose};

/// Relative duality-gap tolerance of [`solve_l1`].
pub const L1_TOL: f64 = 1e-8;
/// Iteration cap of [`solve_l1`].
pub const L1_MAX_ITER: usize = 50_000;

/// `D^T D` for the finite-difference operator with a free first sample.
fn difference_gram(d: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(d, d);
    for k in 0..d {
        g[(k, k)] = if k + 1 < d { 2.0 } else { 1.0 };
        if k + 1 < d {
            g[(k, k + 1)] = -1.0;
            g[(k + 1, k)] = -1.0;
        }
    }
    g
}

/// Minimizer of `1/2 |A x - y|^2 + lambda |D x|^2`.
pub fn solve_l2(y: &DVector<f64>, model: &ForwardModel, lambda: f64) -> Result<Signal> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(domain(format!("lambda must be non-negative, got {lambda}")));
    }
    let d = model.d();
    let mut m = model.gram() + difference_gram(d) * (2.0 * lambda);
    m.fill_upper_triangle_with_lower_triangle();
    let rhs = model.adjoint(y.as_slice())?;
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("l2 normal equations with lambda = {lambda}")))?;
    Ok(chol.solve(&rhs))
}

/// `1/2 |A x - y|^2 + lambda |D x|_1`.
pub fn l1_objective(y: &DVector<f64>, model: &ForwardModel, lambda: f64, x: &DVector<f64>) -> Result<f64> {
    let r = model.apply(x.as_slice())? - y;
    Ok(0.5 * r.norm_squared() + lambda * apply_d(x.as_slice()).lp_norm(1))
}

/// `D^{-T} v`: suffix sums.
fn apply_d_inv_transpose(v: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    let mut acc = 0.0;
    for k in (0..v.len()).rev() {
        acc += v[k];
        out[k] = acc;
    }
    out
}

/// Duality gap at `x` for the problem in increment coordinates `u = D x`,
/// with the scaled residual as dual point.
fn l1_gap(y: &DVector<f64>, model: &ForwardModel, lambda: f64, x: &DVector<f64>) -> Result<f64> {
    let r = y - model.apply(x.as_slice())?;
    let primal = 0.5 * r.norm_squared() + lambda * apply_d(x.as_slice()).lp_norm(1);
    let corr = apply_d_inv_transpose(model.adjoint(r.as_slice())?.as_slice()).amax();
    let scale = if corr > lambda { lambda / corr } else { 1.0 };
    let theta = r * scale;
    let dual = y.dot(&theta) - 0.5 * theta.norm_squared();
    Ok(primal - dual)
}

/// Minimizer of `1/2 |A x - y|^2 + lambda |D x|_1` by a primal-dual
/// splitting iteration, stopped once the duality gap falls below
/// `tol * |y|^2 / 2`.
pub fn solve_l1(y: &DVector<f64>, model: &ForwardModel, lambda: f64, tol: f64) -> Result<Signal> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(domain(format!("lambda must be non-negative, got {lambda}")));
    }
    if !(tol > 0.0) {
        return Err(domain(format!("tolerance must be positive, got {tol}")));
    }
    if lambda == 0.0 {
        return solve_l2(y, model, 0.0);
    }
    let d = model.d();
    let target = tol * 0.5 * y.norm_squared().max(f64::MIN_POSITIVE);
    let aty = model.adjoint(y.as_slice())?;

    // |D|^2 <= 4; balance the primal and dual steps by the data scale
    let data_scale = (aty.amax() / lambda).clamp(1e-3, 1e3);
    let tau = 0.49 * data_scale.sqrt();
    let sigma = 0.49 / data_scale.sqrt();

    let mut m = model.gram() * tau;
    for i in 0..d {
        m[(i, i)] += 1.0;
    }
    let chol = m.cholesky().ok_or_else(|| Error::Singular("primal step system".into()))?;

    let h = increment_design(model);
    let mut x = DVector::zeros(d);
    let mut x_bar = x.clone();
    let mut p = DVector::zeros(d);
    let mut gap = f64::INFINITY;
    for it in 1..=L1_MAX_ITER {
        p += apply_d(x_bar.as_slice()) * sigma;
        p.iter_mut().for_each(|v| *v = v.clamp(-lambda, lambda));
        let rhs = &x - apply_d_transpose(p.as_slice()) * tau + &aty * tau;
        let x_new = chol.solve(&rhs);
        x_bar = &x_new * 2.0 - &x;
        x = x_new;
        if it % 10 == 0 {
            gap = l1_gap(y, model, lambda, &x)?;
            if gap <= target {
                return Ok(x);
            }
        }
        if it % 200 == 0 {
            if let Some(xp) = polish(y, model, &h, lambda, &x, target)? {
                return Ok(xp);
            }
        }
    }
    Err(Error::Convergence {
        iterations: L1_MAX_ITER,
        gap,
    })
}

/// Columns of `H = A D^{-1}`: suffix sums of the columns of `A`.
fn increment_design(model: &ForwardModel) -> DMatrix<f64> {
    let a = model.matrix();
    let mut h = DMatrix::zeros(a.nrows(), a.ncols());
    let mut acc = DVector::zeros(a.nrows());
    for k in (0..a.ncols()).rev() {
        acc += a.column(k);
        h.set_column(k, &acc);
    }
    h
}

/// Exact solves on candidate supports read off the optimality conditions.
/// In increment coordinates `u = D x` the optimum satisfies
/// `H^T (y - H u) = lambda sign(u)` on the support, so coordinates whose
/// correlation is within a relative `delta` of `lambda` are taken as the
/// support and the reduced stationarity equations are solved directly.
/// Returns the first candidate meeting the gap target.
fn polish(y: &DVector<f64>, model: &ForwardModel, h: &DMatrix<f64>, lambda: f64, x: &DVector<f64>, target: f64) -> Result<Option<Signal>> {
    let r = y - model.apply(x.as_slice())?;
    let corr = h.tr_mul(&r);
    let mut last: Option<Vec<usize>> = None;
    for delta in [1e-2, 1e-4, 1e-6, 1e-8] {
        let support: Vec<usize> = (0..corr.len()).filter(|&k| corr[k].abs() >= lambda * (1.0 - delta)).collect();
        if support.is_empty() || last.as_ref() == Some(&support) {
            continue;
        }
        let hs = h.select_columns(&support);
        let signs = DVector::from_iterator(support.len(), support.iter().map(|&k| corr[k].signum()));
        let rhs = hs.tr_mul(y) - &signs * lambda;
        let svd = (hs.tr_mul(&hs)).svd(true, true);
        let eps = 1e-14 * svd.singular_values.max();
        let Ok(us) = svd.solve(&rhs, eps) else { continue };
        last = Some(support.clone());
        if us.iter().zip(signs.iter()).any(|(v, s)| v * s < 0.0) {
            continue;
        }
        let mut full = vec![0.0; corr.len()];
        for (i, &k) in support.iter().enumerate() {
            full[k] = us[i];
        }
        let cand = crate::levy::apply_d_inv(&full);
        if l1_gap(y, model, lambda, &cand)? <= target {
            return Ok(Some(cand));
        }
    }
    Ok(None)
}

/// Log-linear grid `10^(a + (i - 1)(b - a)/(n - 1))`, `i = 1..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoglinearSpec {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

impl LoglinearSpec {
    pub const L2_L1: Self = Self { a: -5.0, b: 5.0, n: 1000 };
    pub const CDPS: Self = Self { a: -3.0, b: 1.0, n: 40 };
    pub const DIFFPIR: Self = Self { a: -4.0, b: 1.0, n: 20 };
    pub const DPNP: Self = Self { a: -1.0, b: 4.0, n: 40 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub spec: Option<LoglinearSpec>,
    pub points: Vec<f64>,
}

impl TuningGrid {
    pub fn loglinear(spec: LoglinearSpec) -> Result<Self> {
        if spec.n < 2 || !(spec.b > spec.a) {
            return Err(domain(format!("log-linear grid needs n >= 2 and b > a, got {spec:?}")));
        }
        let step = (spec.b - spec.a) / (spec.n - 1) as f64;
        let points = (0..spec.n).map(|i| 10f64.powf(spec.a + i as f64 * step)).collect();
        Ok(Self {
            spec: Some(spec),
            points,
        })
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(domain("empty grid"));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("grid points must be strictly increasing"));
        }
        Ok(Self { spec: None, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// C-DPS guidance weights.
pub fn cdps_grid() -> Vec<DpsAlgorithm> {
    let g = TuningGrid::loglinear(LoglinearSpec::CDPS).unwrap();
    g.points.into_iter().map(|zeta| DpsAlgorithm::Cdps { zeta }).collect()
}

/// DiffPIR: `zeta in {0.3, 0.7}` crossed with the regularization grid.
pub fn diffpir_grid() -> Vec<DpsAlgorithm> {
    let g = TuningGrid::loglinear(LoglinearSpec::DIFFPIR).unwrap();
    [0.3, 0.7]
        .into_iter()
        .flat_map(|zeta| g.points.iter().map(move |&lambda| DpsAlgorithm::DiffPir { lambda, zeta }))
        .collect()
}

/// DPnP initial noise levels.
pub fn dpnp_grid() -> Vec<DpsAlgorithm> {
    let g = TuningGrid::loglinear(LoglinearSpec::DPNP).unwrap();
    g.points
        .into_iter()
        .map(|eta_initial| DpsAlgorithm::Dpnp {
            eta_initial,
            eta_final: DPNP_ETA_FINAL,
            iterations: DPNP_ITERATIONS,
        })
        .collect()
}

/// Mean validation MSE per grid point and the selected index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult<P> {
    pub points: Vec<P>,
    /// Mean per-signal MSE `|x_hat - x|^2 / d`; infinite where the estimator failed.
    pub mse: Vec<f64>,
    pub best: usize,
    pub failures: usize,
}

impl<P: Clone> TuningResult<P> {
    pub fn best_point(&self) -> P {
        self.points[self.best].clone()
    }

    pub fn best_mse(&self) -> f64 {
        self.mse[self.best]
    }

    fn from_curve(points: Vec<P>, per_point: Vec<Option<f64>>) -> Self {
        let failures = per_point.iter().filter(|v| v.is_none()).count();
        let mse: Vec<f64> = per_point.into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect();
        let mut best = 0;
        for (i, &v) in mse.iter().enumerate() {
            if v < mse[best] {
                best = i;
            }
        }
        Self {
            points,
            mse,
            best,
            failures,
        }
    }
}

fn truth_of(m: &Measurement) -> Result<&Signal> {
    m.truth
        .as_ref()
        .ok_or_else(|| domain("validation measurement without ground truth"))
}

fn map_points<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Grid search for an estimator `x_hat(y, lambda)`. Ties go to the smaller
/// parameter.
pub fn tune_lambda<F>(estimator: F, validation: &[Measurement], grid: &TuningGrid) -> Result<TuningResult<f64>>
where
    F: Fn(&Measurement, f64) -> Result<Signal> + Sync + Send,
{
    if validation.is_empty() || grid.is_empty() {
        return Err(domain("tuning needs a nonempty validation set and grid"));
    }
    for m in validation {
        truth_of(m)?;
    }
    let curve = map_points(grid.len(), |i| {
        let lambda = grid.points[i];
        let mut total = 0.0;
        for m in validation {
            let x = truth_of(m).ok()?;
            let est = estimator(m, lambda).ok()?;
            total += (est - x).norm_squared() / x.len() as f64;
        }
        Some(total / validation.len() as f64)
    });
    Ok(TuningResult::from_curve(grid.points.clone(), curve))
}

/// Grid search for DPS parameters. Each validation item uses the same random
/// stream at every grid point; the estimate is the mean of
/// `template.n_samples` draws.
pub fn tune_dps(
    template: &DpsConfig,
    grid: &[DpsAlgorithm],
    validation: &[Measurement],
    registry: &StepRegistry,
    denoiser: &dyn Denoiser,
    seed: u64,
) -> Result<TuningResult<DpsAlgorithm>> {
    if validation.is_empty() || grid.is_empty() {
        return Err(domain("tuning needs a nonempty validation set and grid"));
    }
    for m in validation {
        truth_of(m)?;
    }
    let mut curve = Vec::with_capacity(grid.len());
    for alg in grid {
        let cfg = DpsConfig {
            algorithm: alg.clone(),
            keep_trajectories: false,
            ..template.clone()
        };
        let mut total = 0.0;
        let mut ok = true;
        for (i, m) in validation.iter().enumerate() {
            let item_seed = derive_seed(seed, &[purpose::VALIDATION, i as u64]);
            match run_dps(&cfg, registry, m, denoiser, item_seed) {
                Ok(run) => {
                    let x = truth_of(m)?;
                    total += (run.draws.column_mean() - x).norm_squared() / x.len() as f64;
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        curve.push(ok.then(|| total / validation.len() as f64));
    }
    Ok(TuningResult::from_curve(grid.to_vec(), curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{build_operator, OperatorKind, OperatorSpec};
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = stream(seed, &[]);
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn model(kind: OperatorKind, d: usize) -> ForwardModel {
        build_operator(kind, d, &mut stream(3, &[])).unwrap().with_noise(0.1).unwrap()
    }

    #[test]
    fn l2_trivial_and_normal_equations() {
        let id = model(OperatorKind::Identity, 8);
        let y = normals(8, 1);
        assert!((solve_l2(&y, &id, 0.0).unwrap() - &y).amax() < 1e-12);
        for kind in OperatorKind::ALL {
            let m = model(kind, 32);
            let y = normals(m.m(), 2);
            let x = solve_l2(&y, &m, 0.3).unwrap();
            let lhs = m.gram() * &x + difference_gram(32) * &x * 0.6;
            let rhs = m.adjoint(y.as_slice()).unwrap();
            assert!((lhs - &rhs).norm() <= 1e-10 * rhs.norm());
        }
        let imp = model(OperatorKind::Imputation, 16);
        let y = normals(imp.m(), 3);
        assert!(matches!(solve_l2(&y, &imp, 0.0), Err(Error::Singular(_))));
    }

    #[test]
    fn l1_trivial_limits() {
        let id = model(OperatorKind::Identity, 6);
        let y = normals(6, 4);
        assert!((solve_l1(&y, &id, 0.0, L1_TOL).unwrap() - &y).amax() < 1e-12);
        let x = solve_l1(&y, &id, 1e4, L1_TOL).unwrap();
        assert!(x.amax() < 1e-6);
    }

    #[test]
    fn l1_converges_across_operators_and_scales() {
        let law = crate::levy::JumpLaw::laplace(1.0).unwrap();
        for kind in OperatorKind::ALL {
            let m = model(kind, 64);
            let mut rng = stream(5, &[kind as u64]);
            let x = crate::levy::synthesize_signal(&law, 64, &mut rng).unwrap();
            let y = m.apply(x.as_slice()).unwrap() + normals(m.m(), 6) * 0.1;
            for lambda in [1e-2, 0.1, 1.0, 30.0] {
                let est = solve_l1(&y, &m, lambda, L1_TOL).unwrap();
                let gap = l1_gap(&y, &m, lambda, &est).unwrap();
                assert!(gap <= L1_TOL * 0.5 * y.norm_squared(), "{kind:?} {lambda}");
            }
        }
    }

    #[test]
    fn l1_reports_gap_when_capped() {
        // near-singular blur with a tiny weight on pure noise data
        let m = model(OperatorKind::Convolution, 64);
        let y = normals(64, 5);
        match solve_l1(&y, &m, 1e-3, L1_TOL) {
            Ok(x) => assert!(l1_gap(&y, &m, 1e-3, &x).unwrap() <= L1_TOL * 0.5 * y.norm_squared()),
            Err(Error::Convergence { iterations, gap }) => {
                assert_eq!(iterations, L1_MAX_ITER);
                assert!(gap.is_finite() && gap > 0.0);
            }
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn l1_matches_lattice_scan() {
        let spec = OperatorSpec::Convolution {
            d: 3,
            kernel: vec![0.25, 0.5, 0.25],
        };
        let m = ForwardModel::from_spec(spec);
        // Convolution needs room for its kernel; fall back to a dense toy when it does not fit.
        let m = match m {
            Ok(m) => m,
            Err(_) => ForwardModel::from_spec(OperatorSpec::Identity { d: 3 }).unwrap(),
        };
        let y = DVector::from_vec(vec![0.3, 1.1, 0.9]);
        let lambda = 0.2;
        let x = solve_l1(&y, &m, lambda, 1e-12).unwrap();
        let f = |v: &DVector<f64>| l1_objective(&y, &m, lambda, v).unwrap();
        let mut best = (f64::INFINITY, DVector::zeros(3));
        let h = 2e-3;
        for i in -150..=150 {
            for j in -150..=150 {
                for k in -150..=150 {
                    let v = DVector::from_vec(vec![x[0] + i as f64 * h, x[1] + j as f64 * h, x[2] + k as f64 * h]);
                    let val = f(&v);
                    if val < best.0 {
                        best = (val, v);
                    }
                }
            }
        }
        assert!((best.1 - &x).amax() <= 1e-3);
        assert!(f(&x) <= best.0 + 1e-12);
    }

    #[test]
    fn grids() {
        let g = TuningGrid::loglinear(LoglinearSpec::L2_L1).unwrap();
        assert_eq!(g.len(), 1000);
        assert!((g.points[0] - 1e-5).abs() < 1e-18 && (g.points[999] - 1e5).abs() < 1e-8);
        assert!(g.points.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(cdps_grid().len(), 40);
        assert_eq!(diffpir_grid().len(), 40);
        assert_eq!(dpnp_grid().len(), 40);
        assert!(TuningGrid::loglinear(LoglinearSpec { a: 0.0, b: 1.0, n: 1 }).is_err());
        assert!(TuningGrid::from_points(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn tuning_argmin_and_ties() {
        let id = std::sync::Arc::new(model(OperatorKind::Identity, 4));
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let meas = Measurement::new(id, x.clone(), Some(x.clone())).unwrap();
        let grid = TuningGrid::from_points(vec![0.1, 0.5, 1.0, 2.0]).unwrap();
        let r = tune_lambda(|m, l| Ok(&m.y * if l == 1.0 { 1.0 } else { 0.9 }), &[meas.clone()], &grid).unwrap();
        assert_eq!(r.best_point(), 1.0);
        assert_eq!(r.best_mse(), 0.0);
        let r = tune_lambda(|m, _| Ok(m.y.clone()), &[meas], &grid).unwrap();
        assert_eq!(r.best, 0);
    }
}
