//! The benchmark stages. Every stage reads its inputs from and writes its
//! outputs below one output directory:
//!
//! ```text
//! config.toml                               resolved configuration
//! dataset/                                  see `dataset`
//! tuning/<law>/<operator>/<method>[_<denoiser>].json
//! runs/<law>/<operator>/<method>/<denoiser|model>/item_NNNNN.f64, run.json
//! metrics/{gap,coverage}.csv
//! report/...                                see `report`
//! diagnose/{burn_in.csv,sample_count.csv,summary.json}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dpsbench::baselines::{solve_l1, solve_l2, tune_dps, tune_lambda, LoglinearSpec, TuningGrid, L1_TOL};
use dpsbench::diffusion::{Denoiser, OracleDenoiser};
use dpsbench::dps::{run_dps, DpsAlgorithm, DpsConfig, StepRegistry};
use dpsbench::evaluation::{burn_in_trace, log_posterior, mmse_gap_db, burn_in_plateau, run_diagnostic_chains, sample_count_from_chains, hpd_threshold};
use dpsbench::forward::{Measurement, OperatorKind};
use dpsbench::gibbs::Likelihood;
use dpsbench::levy::{log_prior_increments, JumpLaw, Signal};
use dpsbench::rng::{derive_seed, purpose};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{law_code, law_slug, operator_code, BenchmarkConfig, DenoiserKind, Method};
use crate::dataset::{self, load_cell, sha256_hex, write_atomic, Array2, CellData, Manifest};
use crate::external::ExternalDenoiser;

/// Environment variable carrying the jump law to external denoisers.
pub const LAW_ENV: &str = "DPSBENCH_LAW";

/// Paths of one output directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn tuning(&self, law: &JumpLaw, op: OperatorKind, method: Method, denoiser: Option<DenoiserKind>) -> PathBuf {
        let file = match denoiser {
            Some(d) => format!("{method}_{d}.json"),
            None => format!("{method}.json"),
        };
        self.root.join("tuning").join(law_slug(law)).join(op.name()).join(file)
    }

    pub fn run_dir(&self, law: &JumpLaw, op: OperatorKind, method: Method, denoiser: Option<DenoiserKind>) -> PathBuf {
        let den = denoiser.map_or("model", |d| d.name());
        self.root.join("runs").join(law_slug(law)).join(op.name()).join(method.name()).join(den)
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn diagnose(&self) -> PathBuf {
        self.root.join("diagnose")
    }
}

fn item_file(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("item_{i:05}.f64"))
}

/// Every (method, denoiser) pair the config asks for; model-based methods have no denoiser.
pub fn method_variants(config: &BenchmarkConfig) -> Vec<(Method, Option<DenoiserKind>)> {
    let mut kinds = config.denoiser.kinds.clone();
    kinds.sort();
    kinds.dedup();
    let mut out = Vec::new();
    for m in config.methods_sorted() {
        if m.is_dps() {
            out.extend(kinds.iter().map(|&k| (m, Some(k))));
        } else {
            out.push((m, None));
        }
    }
    out
}

pub fn make_denoiser(config: &BenchmarkConfig, kind: DenoiserKind, law: &JumpLaw) -> Result<Box<dyn Denoiser>> {
    Ok(match kind {
        DenoiserKind::Oracle => Box::new(OracleDenoiser::new(*law).with_burn_in(config.denoiser.burn_in)),
        DenoiserKind::External => Box::new(ExternalDenoiser::spawn_with_env(&config.denoiser.command, &[(LAW_ENV, law.to_string())])?),
    })
}

/// Bundle for `config`, regenerated only when missing or stale.
pub fn generate(config: &BenchmarkConfig, ws: &Workspace) -> Result<Manifest> {
    fs::create_dir_all(&ws.root)?;
    write_atomic(&ws.root.join("config.toml"), config.to_toml()?.as_bytes())?;
    let dir = ws.dataset();
    if let Ok(m) = dataset::read_manifest(&dir) {
        if dataset::matches_config(&m, config) && dataset::verify(&dir).is_ok() {
            info!("dataset up to date at {}", dir.display());
            return Ok(m);
        }
    }
    dataset::generate(config, &dir, &mut |msg| info!("{msg}"))
}

fn load_bundle(ws: &Workspace) -> Result<Manifest> {
    dataset::read_manifest(&ws.dataset()).context("no dataset bundle; run `generate` first")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selected {
    Lambda { value: f64 },
    Dps { algorithm: DpsAlgorithm },
}

/// Persisted grid search of one (method, operator, law, denoiser).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub method: Method,
    pub operator: OperatorKind,
    pub law: JumpLaw,
    pub denoiser: Option<DenoiserKind>,
    pub fingerprint: String,
    pub validation_items: usize,
    pub params: Vec<BTreeMap<String, f64>>,
    /// Mean validation MSE per grid point; `null` where the estimator failed.
    pub mse: Vec<Option<f64>>,
    pub best: usize,
    pub failures: usize,
    pub selected: Selected,
}

fn tuning_fingerprint(config: &BenchmarkConfig, manifest: &Manifest, method: Method, denoiser: Option<DenoiserKind>) -> Result<String> {
    let key = serde_json::json!({
        "dataset": manifest.fingerprint(),
        "method": method,
        "denoiser": denoiser,
        "tuning": config.tuning,
        "diffusion": config.diffusion,
        "denoiser_chain": [config.denoiser.burn_in, config.denoiser.samples],
        "command": config.denoiser.command,
        "cdps_guidance": config.cdps_guidance,
        "dpnp_weight_data": config.dpnp_weight_data,
    });
    Ok(sha256_hex(serde_json::to_string(&key)?.as_bytes()))
}

pub fn dps_template(config: &BenchmarkConfig, algorithm: DpsAlgorithm, n_samples: usize) -> Result<DpsConfig> {
    let mut c = DpsConfig::new(algorithm, config.diffusion.schedule()?).with_samples(n_samples);
    c.denoiser_samples = config.denoiser.samples;
    c.dpnp_weight_data = config.dpnp_weight_data;
    c.cdps_guidance = config.cdps_guidance;
    Ok(c)
}

pub fn model_grid(config: &BenchmarkConfig) -> Result<TuningGrid> {
    let full = TuningGrid::loglinear(LoglinearSpec::L2_L1)?;
    Ok(TuningGrid::from_points(full.points.into_iter().step_by(config.tuning.model_stride).collect())?)
}

pub fn dps_grid(config: &BenchmarkConfig, method: Method) -> Vec<DpsAlgorithm> {
    method.dps_grid().into_iter().step_by(config.tuning.dps_stride).collect()
}

pub fn point_estimate(method: Method, m: &Measurement, lambda: f64) -> dpsbench::Result<Signal> {
    match method {
        Method::L2 => solve_l2(&m.y, &m.model, lambda),
        _ => solve_l1(&m.y, &m.model, lambda, L1_TOL),
    }
}

fn tune_cell(config: &BenchmarkConfig, cell: &CellData, method: Method, denoiser: Option<DenoiserKind>, fingerprint: String) -> Result<TuningRecord> {
    let validation = &cell.validation[..config.tuning_items()];
    let (params, mse, best, failures, selected) = match denoiser {
        None => {
            let grid = model_grid(config)?;
            let r = tune_lambda(|m, l| point_estimate(method, m, l), validation, &grid)?;
            let params = r.points.iter().map(|&l| BTreeMap::from([("lambda".to_string(), l)])).collect();
            (params, r.mse.clone(), r.best, r.failures, Selected::Lambda { value: r.best_point() })
        }
        Some(kind) => {
            let grid = dps_grid(config, method);
            let den = make_denoiser(config, kind, &cell.law)?;
            let template = dps_template(config, grid[0].clone(), config.tuning.n_samples)?;
            let seed = derive_seed(config.seed, &[purpose::GRID_POINT, method.code(), kind.code(), operator_code(cell.operator), law_code(&cell.law)]);
            let r = tune_dps(&template, &grid, validation, &StepRegistry::default(), den.as_ref(), seed)?;
            let params = r.points.iter().map(|a| a.params()).collect();
            (params, r.mse.clone(), r.best, r.failures, Selected::Dps { algorithm: r.best_point() })
        }
    };
    if failures == mse.len() {
        bail!("every grid point failed for {method} on {} / {}", cell.law, cell.operator);
    }
    Ok(TuningRecord {
        method,
        operator: cell.operator,
        law: cell.law,
        denoiser,
        fingerprint,
        validation_items: validation.len(),
        params,
        mse: mse.into_iter().map(|v| v.is_finite().then_some(v)).collect(),
        best,
        failures,
        selected,
    })
}

pub fn read_tuning(path: &Path) -> Result<TuningRecord> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TuneSummary {
    pub computed: usize,
    pub cached: usize,
}

/// Grid searches for every cell; records with a matching fingerprint are reused.
pub fn tune(config: &BenchmarkConfig, ws: &Workspace) -> Result<TuneSummary> {
    let manifest = load_bundle(ws)?;
    let mut summary = TuneSummary::default();
    for law in &config.laws {
        for &op in &config.operators {
            let mut cell = None;
            for (method, den) in method_variants(config) {
                let path = ws.tuning(law, op, method, den);
                let fp = tuning_fingerprint(config, &manifest, method, den)?;
                if read_tuning(&path).is_ok_and(|r| r.fingerprint == fp) {
                    summary.cached += 1;
                    continue;
                }
                if cell.is_none() {
                    cell = Some(load_cell(&ws.dataset(), &manifest, law, op)?);
                }
                info!("tuning {method} ({}) on {law} / {op}", den.map_or("model", |d| d.name()));
                let record = tune_cell(config, cell.as_ref().expect("loaded"), method, den, fp)?;
                write_atomic(&path, serde_json::to_string_pretty(&record)?.as_bytes())?;
                summary.computed += 1;
            }
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub item: usize,
    pub error: String,
}

/// Per-cell run record: the parameters used, every item's seed and failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub operator: OperatorKind,
    pub law: JumpLaw,
    pub denoiser: Option<DenoiserKind>,
    pub selected: Selected,
    pub n_samples: usize,
    pub item_seeds: Vec<u64>,
    pub failures: Vec<ItemFailure>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub completed: usize,
    pub skipped: usize,
    pub failures: Vec<(String, ItemFailure)>,
}

pub fn item_seed(config: &BenchmarkConfig, law: &JumpLaw, op: OperatorKind, method: Method, den: Option<DenoiserKind>, item: usize) -> u64 {
    derive_seed(
        config.seed,
        &[purpose::TRAJECTORY, method.code(), den.map_or(0, |d| d.code()), operator_code(op), law_code(law), item as u64],
    )
}

/// Draws of one test item as a `samples x d` row-major array. The
/// measurement passed in never carries the ground truth.
pub fn run_item(config: &BenchmarkConfig, selected: &Selected, method: Method, denoiser: Option<&dyn Denoiser>, m: &Measurement, seed: u64) -> Result<Array2> {
    let blind = Measurement::new(m.model.clone(), m.y.clone(), None)?;
    let d = blind.model.d();
    match (selected, denoiser) {
        (Selected::Lambda { value }, _) => {
            let x = point_estimate(method, &blind, *value)?;
            Ok(Array2 { rows: 1, cols: d, data: x.as_slice().to_vec() })
        }
        (Selected::Dps { algorithm }, Some(den)) => {
            let cfg = dps_template(config, algorithm.clone(), config.n_samples)?;
            let run = run_dps(&cfg, &StepRegistry::default(), &blind, den, seed)?;
            Ok(Array2 { rows: run.draws.ncols(), cols: d, data: run.draws.as_slice().to_vec() })
        }
        (Selected::Dps { .. }, None) => bail!("DPS method without a denoiser"),
    }
}

/// Runs every tuned method on the test split. Items already on disk are
/// skipped, so an interrupted run resumes where it stopped.
pub fn run(config: &BenchmarkConfig, ws: &Workspace) -> Result<RunSummary> {
    let manifest = load_bundle(ws)?;
    let mut summary = RunSummary::default();
    for law in &config.laws {
        for &op in &config.operators {
            let cell = load_cell(&ws.dataset(), &manifest, law, op)?;
            for (method, den) in method_variants(config) {
                let tpath = ws.tuning(law, op, method, den);
                let tuning = read_tuning(&tpath).with_context(|| format!("missing tuning {}; run `tune` first", tpath.display()))?;
                let dir = ws.run_dir(law, op, method, den);
                fs::create_dir_all(&dir)?;
                let denoiser = den.map(|k| make_denoiser(config, k, law)).transpose()?;
                let mut failures = Vec::new();
                let mut seeds = Vec::with_capacity(cell.test.len());
                for (i, m) in cell.test.iter().enumerate() {
                    let seed = item_seed(config, law, op, method, den, i);
                    seeds.push(seed);
                    let path = item_file(&dir, i);
                    if path.exists() {
                        summary.skipped += 1;
                        continue;
                    }
                    match run_item(config, &tuning.selected, method, denoiser.as_deref(), m, seed) {
                        Ok(a) => {
                            write_atomic(&path, &a.to_bytes())?;
                            summary.completed += 1;
                        }
                        Err(e) => {
                            warn!("{method} on {law} / {op} item {i} failed: {e:#}");
                            let f = ItemFailure { item: i, error: format!("{e:#}") };
                            summary.failures.push((dir.display().to_string(), f.clone()));
                            failures.push(f);
                        }
                    }
                }
                let record = RunRecord {
                    method,
                    operator: op,
                    law: *law,
                    denoiser: den,
                    selected: tuning.selected,
                    n_samples: config.n_samples,
                    item_seeds: seeds,
                    failures,
                };
                write_atomic(&dir.join("run.json"), serde_json::to_string_pretty(&record)?.as_bytes())?;
            }
        }
    }
    Ok(summary)
}

/// One value per (cell, method, denoiser, item).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub operator: String,
    pub law: String,
    pub method: String,
    pub denoiser: String,
    pub item: usize,
    pub value: f64,
}

pub fn read_draws(path: &Path, d: usize) -> Result<Array2> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() % (8 * d) != 0 || bytes.is_empty() {
        bail!("{} does not hold whole draws of length {d}", path.display());
    }
    Array2::from_bytes(&bytes, bytes.len() / (8 * d), d)
}

/// Whether `truth` lies in the empirical HPD region of `draws` (rows).
pub fn covered(law: &JumpLaw, lik: &Likelihood, draws: &Array2, truth: &Signal, truth_increments: &[f64], alpha: f64) -> Result<bool> {
    let values: Vec<f64> = (0..draws.rows).map(|r| log_posterior(law, lik, draws.row(r))).collect();
    let threshold = hpd_threshold(&values, alpha)?;
    let truth_value = lik.log_likelihood(truth.as_slice()) + log_prior_increments(law, truth_increments);
    Ok(truth_value >= threshold)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub gap: Vec<MetricRow>,
    pub coverage: Vec<MetricRow>,
}

/// Gap and coverage per test item for everything on disk; missing items are left out.
pub fn evaluate(config: &BenchmarkConfig, ws: &Workspace) -> Result<Metrics> {
    let manifest = load_bundle(ws)?;
    let mut out = Metrics::default();
    for law in &config.laws {
        for &op in &config.operators {
            let cell = load_cell(&ws.dataset(), &manifest, law, op)?;
            let row = |method: &str, den: &str, item: usize, value: f64| MetricRow {
                operator: op.name().to_string(),
                law: law.to_string(),
                method: method.to_string(),
                denoiser: den.to_string(),
                item,
                value,
            };
            let liks = cell
                .test
                .iter()
                .map(|m| Ok(Likelihood::from_model(&m.model, &m.y)?))
                .collect::<Result<Vec<_>>>()?;
            for (i, m) in cell.test.iter().enumerate() {
                let draws = cell.gold_draws_of(i);
                let arr = Array2 { rows: draws.ncols(), cols: draws.nrows(), data: draws.as_slice().to_vec() };
                let truth = m.truth.as_ref().expect("test truth");
                let c = covered(law, &liks[i], &arr, truth, cell.test_increments.row(i), config.alpha)?;
                out.coverage.push(row("gibbs", "-", i, if c { 1.0 } else { 0.0 }));
            }
            for (method, den) in method_variants(config) {
                let dir = ws.run_dir(law, op, method, den);
                let den_name = den.map_or("-", |d| d.name());
                for (i, m) in cell.test.iter().enumerate() {
                    let path = item_file(&dir, i);
                    if !path.exists() {
                        continue;
                    }
                    let draws = read_draws(&path, cell.model.d())?;
                    let truth = m.truth.as_ref().expect("test truth");
                    let mean = Signal::from_fn(draws.cols, |k, _| (0..draws.rows).map(|r| draws.row(r)[k]).sum::<f64>() / draws.rows as f64);
                    let gap = mmse_gap_db(&mean, &cell.gold_mean.row_vector(i), truth)?;
                    out.gap.push(row(method.name(), den_name, i, gap));
                    if method.is_dps() {
                        let c = covered(law, &liks[i], &draws, truth, cell.test_increments.row(i), config.alpha)?;
                        out.coverage.push(row(method.name(), den_name, i, if c { 1.0 } else { 0.0 }));
                    }
                }
            }
        }
    }
    fs::create_dir_all(ws.metrics())?;
    write_csv(&ws.metrics().join("gap.csv"), &out.gap)?;
    write_csv(&ws.metrics().join("coverage.csv"), &out.coverage)?;
    Ok(out)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
    write_atomic(path, &bytes)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize().map(|row| row.map_err(anyhow::Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseSummary {
    pub law: JumpLaw,
    pub sigma: f64,
    pub chains: usize,
    pub iterations: usize,
    pub n_avg: usize,
    pub window: usize,
    pub plateau_iteration: Option<usize>,
    /// Median of the trace over the second half of the windows that end before the reference block.
    pub plateau_level: f64,
    pub tol: f64,
    pub sample_count: usize,
    pub sample_count_reached: bool,
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    w1: f64,
}

#[derive(Serialize)]
struct CountRow {
    window: usize,
    normalized_mse: f64,
}

/// Burn-in and sample-count protocols on a denoising problem at the
/// calibrated noise level of the configured law.
pub fn diagnose(config: &BenchmarkConfig, ws: &Workspace) -> Result<DiagnoseSummary> {
    let dc = &config.diagnose;
    let sigma = dataset::cell_model(config, &dc.law, OperatorKind::Identity)?.noise()?;
    let settings = dc.settings(config.d);
    info!("diagnostic chains: {} x {} iterations", settings.chains, settings.iterations);
    let chains = run_diagnostic_chains(&dc.law, sigma, settings, config.seed)?;
    let trace = burn_in_trace(&chains, dc.window)?;
    let plateau = burn_in_plateau(settings, &trace, dc.window);
    let count = sample_count_from_chains(&chains, dc.tol);
    let dir = ws.diagnose();
    fs::create_dir_all(&dir)?;
    let rows: Vec<TraceRow> = trace.iter().enumerate().map(|(i, &w1)| TraceRow { iteration: i + 1, w1 }).collect();
    write_csv(&dir.join("burn_in.csv"), &rows)?;
    let rows: Vec<CountRow> = count.mse.iter().enumerate().map(|(i, &v)| CountRow { window: i + 1, normalized_mse: v }).collect();
    write_csv(&dir.join("sample_count.csv"), &rows)?;
    let before = (settings.iterations - settings.n_avg + 1).saturating_sub(dc.window).clamp(1, trace.len());
    let mut tail = trace[before / 2..before].to_vec();
    tail.sort_by(f64::total_cmp);
    let summary = DiagnoseSummary {
        law: dc.law,
        sigma,
        chains: settings.chains,
        iterations: settings.iterations,
        n_avg: settings.n_avg,
        window: dc.window,
        plateau_iteration: plateau,
        plateau_level: tail[tail.len() / 2],
        tol: dc.tol,
        sample_count: count.window,
        sample_count_reached: count.reached,
    };
    write_atomic(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}
