//! Benchmark configuration: a TOML file layered over a desk or paper profile.
//!
//! Every key is optional; missing keys take the profile's value. Unknown keys
//! are rejected so typos do not silently fall back to defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use dpsbench::diffusion::DiffusionSchedule;
use dpsbench::dps::{CdpsGuidance, DpsAlgorithm};
use dpsbench::evaluation::{DiagnosticSettings, BURN_IN_WINDOW};
use dpsbench::forward::OperatorKind;
use dpsbench::gibbs::ChainSettings;
use dpsbench::levy::JumpLaw;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

/// Estimators the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    L2,
    L1,
    Cdps,
    Diffpir,
    Dpnp,
}

impl Method {
    pub const ALL: [Method; 5] = [Self::L2, Self::L1, Self::Cdps, Self::Diffpir, Self::Dpnp];

    pub fn name(&self) -> &'static str {
        match self {
            Self::L2 => "l2",
            Self::L1 => "l1",
            Self::Cdps => "cdps",
            Self::Diffpir => "diffpir",
            Self::Dpnp => "dpnp",
        }
    }

    /// Whether the method draws posterior samples through a denoiser.
    pub fn is_dps(&self) -> bool {
        matches!(self, Self::Cdps | Self::Diffpir | Self::Dpnp)
    }

    pub fn code(&self) -> u64 {
        *self as u64 + 1
    }

    /// Full parameter grid of a DPS method.
    pub fn dps_grid(&self) -> Vec<DpsAlgorithm> {
        match self {
            Self::Cdps => dpsbench::baselines::cdps_grid(),
            Self::Diffpir => dpsbench::baselines::diffpir_grid(),
            Self::Dpnp => dpsbench::baselines::dpnp_grid(),
            Self::L2 | Self::L1 => Vec::new(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .with_context(|| format!("unknown method {s:?}"))
    }
}

/// Which denoiser backs the DPS methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    Oracle,
    External,
}

impl DenoiserKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::External => "external",
        }
    }

    pub fn code(&self) -> u64 {
        *self as u64 + 1
    }
}

impl fmt::Display for DenoiserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        Ok(DiffusionSchedule::new(self.steps, self.beta_start, self.beta_end)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldConfig {
    pub burn_in: usize,
    pub samples: usize,
    /// Evenly thinned draws persisted per test item for the coverage evaluation.
    pub stored_draws: usize,
}

impl GoldConfig {
    pub fn chain(&self) -> ChainSettings {
        ChainSettings {
            burn_in: self.burn_in,
            samples: self.samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub burn_in: usize,
    pub samples: usize,
    /// Denoisers to run the DPS methods with; a second entry enables the delta table.
    pub kinds: Vec<DenoiserKind>,
    /// Command line of the external denoiser process.
    pub command: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    /// Draws per trajectory set during the DPS grid search.
    pub n_samples: usize,
    /// Validation items used for tuning (at most the validation split).
    pub items: usize,
    /// Keep every k-th point of the 1000-point model-based grid.
    pub model_stride: usize,
    /// Keep every k-th point of the 40-point DPS grids.
    pub dps_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub law: JumpLaw,
    pub chains: usize,
    pub iterations: usize,
    pub n_avg: usize,
    pub window: usize,
    pub tol: f64,
}

impl DiagnoseConfig {
    pub fn settings(&self, d: usize) -> DiagnosticSettings {
        DiagnosticSettings {
            d,
            chains: self.chains,
            iterations: self.iterations,
            n_avg: self.n_avg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub profile: Profile,
    pub seed: u64,
    pub d: usize,
    pub laws: Vec<JumpLaw>,
    pub operators: Vec<OperatorKind>,
    pub methods: Vec<Method>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Signals used to calibrate the noise level (drawn from the training split).
    pub n_calibration: usize,
    pub snr_db: f64,
    pub n_samples: usize,
    pub alpha: f64,
    pub cdps_guidance: CdpsGuidance,
    pub dpnp_weight_data: bool,
    pub diffusion: DiffusionConfig,
    pub gold: GoldConfig,
    pub denoiser: DenoiserConfig,
    pub tuning: TuningConfig,
    pub diagnose: DiagnoseConfig,
    pub output: PathBuf,
}

impl BenchmarkConfig {
    pub fn profile(profile: Profile) -> Self {
        let desk = profile == Profile::Desk;
        let diag = if desk { DiagnosticSettings::DESK } else { DiagnosticSettings::PAPER };
        let gold = if desk { ChainSettings::DESK } else { ChainSettings::PAPER };
        Self {
            profile,
            seed: 2024,
            d: 64,
            laws: JumpLaw::benchmark_set(),
            operators: OperatorKind::ALL.to_vec(),
            methods: Method::ALL.to_vec(),
            n_train: if desk { 1_000 } else { 1_000_000 },
            n_val: if desk { 100 } else { 1_000 },
            n_test: if desk { 100 } else { 1_000 },
            n_calibration: 1_000,
            snr_db: 25.0,
            n_samples: 50,
            alpha: 0.9,
            cdps_guidance: CdpsGuidance::default(),
            dpnp_weight_data: true,
            diffusion: DiffusionConfig {
                steps: if desk { 200 } else { 1000 },
                beta_start: if desk { 5e-4 } else { 1e-4 },
                beta_end: if desk { 0.1 } else { 2e-2 },
            },
            gold: GoldConfig {
                burn_in: gold.burn_in,
                samples: gold.samples,
                stored_draws: 200,
            },
            denoiser: DenoiserConfig {
                burn_in: ChainSettings::DENOISER.burn_in,
                samples: ChainSettings::DENOISER.samples,
                kinds: vec![DenoiserKind::Oracle],
                command: Vec::new(),
            },
            tuning: TuningConfig {
                n_samples: 10,
                items: if desk { 20 } else { 1_000 },
                model_stride: 1,
                dps_stride: if desk { 2 } else { 1 },
            },
            diagnose: DiagnoseConfig {
                law: JumpLaw::StudentT { dof: 1.0 },
                chains: diag.chains,
                iterations: diag.iterations,
                n_avg: diag.n_avg,
                window: BURN_IN_WINDOW,
                tol: 1e-2,
            },
            output: PathBuf::from("bench-out"),
        }
    }

    /// Parses TOML text over the profile named in it (or `fallback`).
    pub fn from_toml(text: &str, fallback: Profile) -> Result<Self> {
        let overrides: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        let profile = match overrides.get("profile") {
            Some(v) => v.clone().try_into::<Profile>().context("bad profile")?,
            None => fallback,
        };
        let mut base = toml::Table::try_from(Self::profile(profile))?;
        merge(&mut base, overrides);
        let cfg: Self = toml::Value::Table(base).try_into().context("invalid benchmark config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text, fallback)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 || self.n_calibration == 0 {
            bail!("split sizes must be at least 1");
        }
        if self.n_calibration > self.n_train {
            bail!("calibration signals come from the training split; n_calibration > n_train");
        }
        if self.d < 2 {
            bail!("d must be at least 2");
        }
        if self.laws.is_empty() || self.operators.is_empty() || self.methods.is_empty() {
            bail!("laws, operators and methods must be nonempty");
        }
        if self.n_samples == 0 || self.tuning.n_samples == 0 || self.tuning.items == 0 {
            bail!("sample counts must be at least 1");
        }
        if self.tuning.model_stride == 0 || self.tuning.dps_stride == 0 {
            bail!("grid strides must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("alpha must lie in (0, 1)");
        }
        if self.gold.stored_draws == 0 || self.gold.stored_draws > self.gold.samples {
            bail!("gold.stored_draws must lie in 1..=gold.samples");
        }
        if self.denoiser.kinds.is_empty() {
            bail!("at least one denoiser kind is required");
        }
        if self.denoiser.kinds.contains(&DenoiserKind::External) && self.denoiser.command.is_empty() {
            bail!("the external denoiser needs denoiser.command");
        }
        self.diffusion.schedule()?;
        Ok(())
    }

    pub fn tuning_items(&self) -> usize {
        self.tuning.items.min(self.n_val)
    }

    pub fn methods_sorted(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        m
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Filesystem-safe form of a law name.
pub fn law_slug(law: &JumpLaw) -> String {
    law.to_string().replace(':', "_")
}

/// Stable integer id of a law for seed paths, independent of list order.
pub fn law_code(law: &JumpLaw) -> u64 {
    use sha2::{Digest, Sha256};
    let h = Sha256::digest(law.to_string().as_bytes());
    u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
}

pub fn operator_code(kind: OperatorKind) -> u64 {
    kind as u64 + 1
}
