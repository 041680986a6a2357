use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use pretrain_bench::app;
use pretrain_bench::config::{builtin, Instantiation, LoadedConfig};

#[derive(Parser)]
#[command(name = "pretrain-bench", about = "Two-phase pretraining experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Latent factor sweeps (default: m-axis rate).
    Factor(Common),
    /// Gaussian mixture sweep.
    Gmm(Common),
    /// Contrastive pair model sweep.
    Contrastive(Common),
    /// Two-phase MLE failure frequency.
    Counterexample(Common),
    /// Informativeness suites.
    Verify(Common),
    /// Recompute checks and plots from an existing results.csv.
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long = "mc-count")]
    mc_count: Option<usize>,
}

fn load(common: &Common, default: &str) -> Result<LoadedConfig> {
    let mut loaded = match &common.config {
        Some(path) => LoadedConfig::from_path(path)?,
        None => LoadedConfig::from_str(default)?,
    };
    loaded
        .config
        .override_with(common.seed, common.trials, common.mc_count, common.out.clone());
    loaded.config.validate()?;
    Ok(loaded)
}

fn execute(cli: Cli) -> Result<bool> {
    let (common, default, expected) = match &cli.command {
        Command::Factor(c) => (c, builtin::FACTOR_M_AXIS, Some(Instantiation::Factor)),
        Command::Gmm(c) => (c, builtin::GMM_N_AXIS, Some(Instantiation::Gmm)),
        Command::Contrastive(c) => (c, builtin::CONTRASTIVE_N_AXIS, Some(Instantiation::Contrastive)),
        Command::Counterexample(c) => (c, builtin::COUNTEREXAMPLE, Some(Instantiation::Counterexample)),
        Command::Verify(c) => (c, builtin::VERIFY, None),
        Command::Report(c) => (c, builtin::FACTOR_M_AXIS, None),
    };
    let report_only = matches!(cli.command, Command::Report(_));
    let loaded = load(common, default)?;
    let config = &loaded.config;
    if matches!(cli.command, Command::Verify(_)) && config.verify.is_none() {
        bail!("the verify command needs a [verify] section");
    }
    if let Some(kind) = expected {
        if config.verify.is_some() || config.experiment.instantiation != kind {
            bail!("config is not a {} sweep", kind.as_str());
        }
    }
    let outcome = if report_only {
        app::rerun_report(&loaded, &loaded.config.experiment.out_dir)?
    } else {
        app::run(&loaded, common.jobs)?
    };
    for check in &outcome.checks {
        println!("{} {}", if check.pass { "PASS" } else { "FAIL" }, check.kind);
    }
    for file in &outcome.files {
        log::info!("wrote {}", file.display());
    }
    log::info!("finished in {:.1}s", outcome.seconds);
    Ok(outcome.all_pass())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
