//! Dataset bundles: raw little-endian f64 arrays (row-major) plus a JSON
//! manifest with shapes, checksums, seeds and operator descriptors.
//!
//! Layout under the bundle directory:
//!
//! ```text
//! manifest.json
//! <law>/<operator>/{val,test}_{signals,increments,y}.f64
//! <law>/<operator>/gold_{mean,var,draws}.f64
//! ```
//!
//! Seed paths below the master seed (purpose tags from `dpsbench::rng`):
//! operator `[OPERATOR, op]`, calibration signals `[TRAIN, law, i]`,
//! validation signals `[VALIDATION, law, i]`, test signals `[TEST, law, i]`,
//! measurement noise `[NOISE, split, op, law, i]`, gold chains
//! `[GOLD_CHAIN, op, law, i]`. Distinct purpose tags keep the splits disjoint.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use dpsbench::forward::{build_operator, calibrate_noise, ForwardModel, ForwardModelRecord, Measurement, OperatorKind};
use dpsbench::gibbs::{Likelihood, PosteriorSampler, RunningMoments};
use dpsbench::levy::{synthesize, JumpLaw, LevySample};
use dpsbench::rng::{purpose, stream};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{law_code, law_slug, operator_code, BenchmarkConfig, GoldConfig, Profile};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

/// A row-major matrix of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Array2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Array2 {
    pub fn from_rows<'a, I: IntoIterator<Item = &'a [f64]>>(cols: usize, rows: I) -> Self {
        let mut data = Vec::new();
        let mut n = 0;
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
            n += 1;
        }
        Self { rows: n, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_vector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.row(i))
    }

    /// Rows `start..start + n` as the columns of a `cols x n` matrix.
    pub fn block_as_columns(&self, start: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.cols, n, &self.data[start * self.cols..(start + n) * self.cols])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_bytes(bytes: &[u8], rows: usize, cols: usize) -> Result<Self> {
        ensure!(bytes.len() == rows * cols * 8, "array holds {} bytes, expected {}", bytes.len(), rows * cols * 8);
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Self { rows, cols, data })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes to a temporary sibling and renames, so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellManifest {
    pub law: JumpLaw,
    pub operator: OperatorKind,
    pub model: ForwardModelRecord,
    pub arrays: BTreeMap<String, ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub profile: Profile,
    pub seed: u64,
    pub d: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_calibration: usize,
    pub snr_db: f64,
    pub gold: GoldConfig,
    pub cells: Vec<CellManifest>,
}

impl Manifest {
    pub fn cell(&self, law: &JumpLaw, op: OperatorKind) -> Option<&CellManifest> {
        self.cells.iter().find(|c| c.law == *law && c.operator == op)
    }

    /// Checksum of the manifest text, used to key caches on the dataset.
    pub fn fingerprint(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("manifest serializes").as_bytes())
    }
}

fn cell_dir(law: &JumpLaw, op: OperatorKind) -> PathBuf {
    PathBuf::from(law_slug(law)).join(op.name())
}

fn signals(law: &JumpLaw, d: usize, tag: u64, n: usize, seed: u64) -> Result<Vec<LevySample>> {
    (0..n)
        .map(|i| Ok(synthesize(law, d, &mut stream(seed, &[tag, law_code(law), i as u64]))?))
        .collect()
}

fn measure(model: &ForwardModel, x: &DVector<f64>, path: &[u64], seed: u64) -> Result<DVector<f64>> {
    let sigma = model.noise()?;
    let mut rng = stream(seed, path);
    let mut y = model.apply(x.as_slice())?;
    for v in y.iter_mut() {
        *v += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(y)
}

/// Gold-standard statistics of one test measurement.
pub struct GoldItem {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
    /// `d x stored_draws`, evenly thinned from the chain.
    pub draws: DMatrix<f64>,
}

pub fn gold_chain(law: &JumpLaw, model: &ForwardModel, y: &DVector<f64>, gold: GoldConfig, path: &[u64], seed: u64) -> Result<GoldItem> {
    let lik = Likelihood::from_model(model, y)?;
    let sampler = PosteriorSampler::new(law, &lik)?;
    let d = model.d();
    let stride = gold.samples / gold.stored_draws;
    let mut moments = RunningMoments::new(d);
    let mut kept = Vec::with_capacity(d * gold.stored_draws);
    let mut i = 0;
    sampler.run(gold.chain(), &vec![0.0; d], &mut stream(seed, path), |x| {
        moments.push(x);
        if i % stride == stride - 1 && kept.len() < d * gold.stored_draws {
            kept.extend_from_slice(x);
        }
        i += 1;
    })?;
    Ok(GoldItem {
        mean: moments.mean().clone(),
        var: moments.variance(),
        draws: DMatrix::from_vec(d, gold.stored_draws, kept),
    })
}

struct PendingArray {
    name: &'static str,
    array: Array2,
}

fn split_arrays(prefix: &'static [&'static str; 3], samples: &[LevySample], ys: &[DVector<f64>], d: usize, m: usize) -> Vec<PendingArray> {
    vec![
        PendingArray { name: prefix[0], array: Array2::from_rows(d, samples.iter().map(|s| s.signal.as_slice())) },
        PendingArray { name: prefix[1], array: Array2::from_rows(d, samples.iter().map(|s| s.increments.as_slice())) },
        PendingArray { name: prefix[2], array: Array2::from_rows(m, ys.iter().map(|y| y.as_slice())) },
    ]
}

/// Builds the operator and calibrates its noise level for one cell.
pub fn cell_model(config: &BenchmarkConfig, law: &JumpLaw, op: OperatorKind) -> Result<ForwardModel> {
    let model = build_operator(op, config.d, &mut stream(config.seed, &[purpose::OPERATOR, operator_code(op)]))?;
    let calib: Vec<DVector<f64>> = signals(law, config.d, purpose::TRAIN, config.n_calibration, config.seed)?
        .into_iter()
        .map(|s| s.signal)
        .collect();
    let sigma = calibrate_noise(&model, &calib, config.snr_db)?;
    Ok(model.with_noise(sigma)?)
}

/// Generates (or regenerates) the bundle under `dir`.
pub fn generate(config: &BenchmarkConfig, dir: &Path, log: &mut dyn FnMut(&str)) -> Result<Manifest> {
    let d = config.d;
    let mut cells = Vec::new();
    for law in &config.laws {
        let val = signals(law, d, purpose::VALIDATION, config.n_val, config.seed)?;
        let test = signals(law, d, purpose::TEST, config.n_test, config.seed)?;
        for &op in &config.operators {
            let (lc, oc) = (law_code(law), operator_code(op));
            let model = cell_model(config, law, op)?;
            let m = model.m();
            let val_y = val
                .iter()
                .enumerate()
                .map(|(i, s)| measure(&model, &s.signal, &[purpose::NOISE, purpose::VALIDATION, oc, lc, i as u64], config.seed))
                .collect::<Result<Vec<_>>>()?;
            let test_y = test
                .iter()
                .enumerate()
                .map(|(i, s)| measure(&model, &s.signal, &[purpose::NOISE, purpose::TEST, oc, lc, i as u64], config.seed))
                .collect::<Result<Vec<_>>>()?;
            log(&format!("gold chains for {law} / {op} ({} items)", test_y.len()));
            let gold = test_y
                .par_iter()
                .enumerate()
                .map(|(i, y)| gold_chain(law, &model, y, config.gold, &[purpose::GOLD_CHAIN, oc, lc, i as u64], config.seed))
                .collect::<Result<Vec<_>>>()?;

            let mut pending = split_arrays(&["val_signals", "val_increments", "val_y"], &val, &val_y, d, m);
            pending.extend(split_arrays(&["test_signals", "test_increments", "test_y"], &test, &test_y, d, m));
            pending.push(PendingArray { name: "gold_mean", array: Array2::from_rows(d, gold.iter().map(|g| g.mean.as_slice())) });
            pending.push(PendingArray { name: "gold_var", array: Array2::from_rows(d, gold.iter().map(|g| g.var.as_slice())) });
            let mut draws = Array2 { rows: 0, cols: d, data: Vec::new() };
            for g in &gold {
                draws.data.extend_from_slice(g.draws.as_slice());
                draws.rows += g.draws.ncols();
            }
            pending.push(PendingArray { name: "gold_draws", array: draws });

            let rel = cell_dir(law, op);
            let mut arrays = BTreeMap::new();
            for p in pending {
                let file = rel.join(format!("{}.f64", p.name));
                let bytes = p.array.to_bytes();
                write_atomic(&dir.join(&file), &bytes)?;
                arrays.insert(
                    p.name.to_string(),
                    ArrayEntry {
                        file: file.to_string_lossy().replace('\\', "/"),
                        rows: p.array.rows,
                        cols: p.array.cols,
                        sha256: sha256_hex(&bytes),
                    },
                );
            }
            cells.push(CellManifest {
                law: *law,
                operator: op,
                model: model.record(),
                arrays,
            });
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        profile: config.profile,
        seed: config.seed,
        d,
        n_train: config.n_train,
        n_val: config.n_val,
        n_test: config.n_test,
        n_calibration: config.n_calibration,
        snr_db: config.snr_db,
        gold: config.gold,
        cells,
    };
    write_atomic(&dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if manifest.format_version != FORMAT_VERSION {
        bail!("bundle format {} is not supported (expected {FORMAT_VERSION})", manifest.format_version);
    }
    Ok(manifest)
}

/// Whether an existing bundle was generated from the same settings.
pub fn matches_config(manifest: &Manifest, config: &BenchmarkConfig) -> bool {
    manifest.seed == config.seed
        && manifest.d == config.d
        && manifest.n_val == config.n_val
        && manifest.n_test == config.n_test
        && manifest.n_train == config.n_train
        && manifest.n_calibration == config.n_calibration
        && manifest.snr_db == config.snr_db
        && manifest.gold == config.gold
        && config.laws.iter().all(|l| config.operators.iter().all(|&o| manifest.cell(l, o).is_some()))
}

pub fn read_array(dir: &Path, entry: &ArrayEntry) -> Result<Array2> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let sum = sha256_hex(&bytes);
    if sum != entry.sha256 {
        bail!("checksum mismatch for {}: manifest {}, file {sum}", entry.file, entry.sha256);
    }
    Array2::from_bytes(&bytes, entry.rows, entry.cols)
}

/// Verifies every array checksum of the bundle.
pub fn verify(dir: &Path) -> Result<Manifest> {
    let manifest = read_manifest(dir)?;
    for cell in &manifest.cells {
        for entry in cell.arrays.values() {
            read_array(dir, entry)?;
        }
    }
    Ok(manifest)
}

/// One (law, operator) cell loaded into memory.
pub struct CellData {
    pub law: JumpLaw,
    pub operator: OperatorKind,
    pub model: Arc<ForwardModel>,
    pub validation: Vec<Measurement>,
    pub test: Vec<Measurement>,
    pub test_increments: Array2,
    pub gold_mean: Array2,
    pub gold_var: Array2,
    pub gold_draws: Array2,
    pub stored_draws: usize,
}

impl CellData {
    /// Stored gold draws of test item `i` as columns.
    pub fn gold_draws_of(&self, i: usize) -> DMatrix<f64> {
        self.gold_draws.block_as_columns(i * self.stored_draws, self.stored_draws)
    }
}

pub fn load_cell(dir: &Path, manifest: &Manifest, law: &JumpLaw, op: OperatorKind) -> Result<CellData> {
    let cell = manifest.cell(law, op).with_context(|| format!("bundle has no cell {law} / {op}"))?;
    let get = |name: &str| -> Result<Array2> {
        let entry = cell.arrays.get(name).with_context(|| format!("cell {law} / {op} lacks array {name}"))?;
        read_array(dir, entry)
    };
    let model = Arc::new(ForwardModel::from_record(&cell.model)?);
    let split = |sig: &str, y: &str| -> Result<Vec<Measurement>> {
        let (x, y) = (get(sig)?, get(y)?);
        (0..x.rows)
            .map(|i| Ok(Measurement::new(model.clone(), y.row_vector(i), Some(x.row_vector(i)))?))
            .collect()
    };
    Ok(CellData {
        law: *law,
        operator: op,
        validation: split("val_signals", "val_y")?,
        test: split("test_signals", "test_y")?,
        test_increments: get("test_increments")?,
        gold_mean: get("gold_mean")?,
        gold_var: get("gold_var")?,
        gold_draws: get("gold_draws")?,
        stored_draws: manifest.gold.stored_draws,
        model,
    })
}
