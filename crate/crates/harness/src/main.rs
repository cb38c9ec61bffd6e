use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dpsbench::diffusion::OracleDenoiser;
use dpsbench::levy::JumpLaw;
use dpsbench_harness::config::{BenchmarkConfig, Profile};
use dpsbench_harness::pipeline::{self, Workspace, LAW_ENV};
use dpsbench_harness::{external, report};
use log::{error, info};

#[derive(Parser)]
#[command(name = "dpsbench", version, about = "Posterior sampling benchmark for sparse Levy-process priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config layered over the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long)]
    seed_override: Option<u64>,
    /// Default scales when the config does not name a profile.
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
}

impl Common {
    fn resolve(&self) -> Result<(BenchmarkConfig, Workspace)> {
        let mut config = match &self.config {
            Some(p) => BenchmarkConfig::load(p, self.profile)?,
            None => BenchmarkConfig::profile(self.profile),
        };
        if let Some(out) = &self.out {
            config.output = out.clone();
        }
        if let Some(seed) = self.seed_override {
            config.seed = seed;
        }
        config.validate()?;
        let ws = Workspace::new(config.output.clone());
        Ok((config, ws))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize signals and measurements and compute gold-standard chains.
    Generate(Common),
    /// Grid-search the parameters of every method on the validation split.
    Tune(Common),
    /// Draw posterior samples / point estimates for every test item.
    Run(Common),
    /// Per-item MMSE optimality gaps and HPD coverage.
    Evaluate(Common),
    /// Aggregate tables (CSV and plain text).
    Report(Common),
    /// Burn-in and sample-count protocols for the Gibbs chains.
    Diagnose(Common),
    /// generate, tune, run, evaluate and report in sequence.
    All(Common),
    /// Print the resolved configuration.
    ShowConfig(Common),
    /// Serve the oracle denoiser over the external-denoiser protocol on stdin/stdout.
    DenoiserServer {
        /// Jump law; defaults to the DPSBENCH_LAW environment variable.
        #[arg(long)]
        law: Option<String>,
        #[arg(long, default_value_t = 100)]
        burn_in: usize,
    },
}

fn stage_run(config: &BenchmarkConfig, ws: &Workspace) -> Result<bool> {
    let s = pipeline::run(config, ws)?;
    info!("run: {} items computed, {} already present, {} failed", s.completed, s.skipped, s.failures.len());
    for (dir, f) in &s.failures {
        error!("{dir} item {}: {}", f.item, f.error);
    }
    Ok(s.failures.is_empty())
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate(c) => {
            let (config, ws) = c.resolve()?;
            let m = pipeline::generate(&config, &ws)?;
            info!("dataset with {} cells at {}", m.cells.len(), ws.dataset().display());
        }
        Command::Tune(c) => {
            let (config, ws) = c.resolve()?;
            let s = pipeline::tune(&config, &ws)?;
            info!("tuning: {} computed, {} cached", s.computed, s.cached);
        }
        Command::Run(c) => {
            let (config, ws) = c.resolve()?;
            return stage_run(&config, &ws);
        }
        Command::Evaluate(c) => {
            let (config, ws) = c.resolve()?;
            let m = pipeline::evaluate(&config, &ws)?;
            info!("{} gap rows, {} coverage rows", m.gap.len(), m.coverage.len());
        }
        Command::Report(c) => {
            let (config, ws) = c.resolve()?;
            print!("{}", report::report(&config, &ws)?.text);
        }
        Command::Diagnose(c) => {
            let (config, ws) = c.resolve()?;
            let s = pipeline::diagnose(&config, &ws)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::All(c) => {
            let (config, ws) = c.resolve()?;
            pipeline::generate(&config, &ws)?;
            pipeline::tune(&config, &ws)?;
            let ok = stage_run(&config, &ws)?;
            pipeline::evaluate(&config, &ws)?;
            print!("{}", report::report(&config, &ws)?.text);
            return Ok(ok);
        }
        Command::ShowConfig(c) => {
            let (config, _) = c.resolve()?;
            print!("{}", config.to_toml()?);
        }
        Command::DenoiserServer { law, burn_in } => {
            let law = match law {
                Some(l) => l,
                None => std::env::var(LAW_ENV).with_context(|| format!("pass --law or set {LAW_ENV}"))?,
            };
            let law: JumpLaw = law.parse()?;
            let den = OracleDenoiser::new(law).with_burn_in(burn_in);
            external::serve(&den, std::io::stdin().lock(), std::io::stdout().lock())?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
