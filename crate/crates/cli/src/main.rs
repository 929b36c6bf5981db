mod artifacts;
mod commands;
mod config;
mod setup;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use artifacts::{Artifacts, Meta};
use config::ExperimentConfig;
use setup::{RegimeFlag, Setup};

const AFTER_HELP: &str = "\
Output files (every CSV starts with a `#` line carrying tool version, schema,
config hash, seed and time steps; JSON files carry the same data under `meta`):

  validation.json          hypothesis checks                      (validate)
  spectrum.json            lambda0, lambda1, A, B, theta0, mu0     (spectrum)
  eigenfunction.csv        x, theta0, mu0                         (spectrum)
  moments.csv              t, x, u0, u1, ..., uN                  (moments)
  limits.json              field invariants and regime limits     (moments)
  supercritical_limits.csv x, v1, ..., vN                         (moments)
  survival.csv             t, x, u0                               (survive)
  survival_x0.csv          t, u0, t_plus_1_u0, exp_lambda0_t_u0   (survive)
  h.csv                    x, h, u0_route                         (survive)
  asymptotics.json         survival asymptotics and h summary     (survive)
  counts.csv               replica, t, n, f_total                 (simulate)
  estimators.csv           t, survival, survival_se, survivors,
                           m<n>, m<n>_se, m<n>_within_yule        (simulate)
  cutoff.csv               t, m, p_exceed, se                     (simulate)
  trajectories.csv         replica, t, id, x                      (simulate)
  manifest.json            hard and statistical checks            (verify)
  report.md, report.json   summary of an artifact directory       (report)
  run_log.<command>.json   wall-clock and thread count

Exit status: 0 success, 1 error or failed hard assertion (verify),
2 failed hypothesis check (validate).";

#[derive(Parser)]
#[command(name = "fkbranch", version, about = "Feynman-Kac branching process experiments", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: `$FKBRANCH_OUT/<name>`, then `output.dir`, then `fkbranch-out/<name>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides `mc.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Rayon worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Required regime; anything else is an error.
    #[arg(long, global = true, value_enum, default_value = "auto")]
    regime: RegimeFlag,
}

#[derive(Subcommand, Clone, PartialEq, Eq)]
enum Command {
    /// Check the standing hypotheses on the grid.
    Validate,
    /// Principal eigentriple and regime.
    Spectrum,
    /// Moment fields and regime limits.
    Moments,
    /// Survival field, asymptotics and the limit h.
    Survive,
    /// Monte Carlo replicas and estimators.
    Simulate,
    /// Regime test battery end to end.
    Verify,
    /// Summarize an artifact directory.
    Report {
        /// Directory holding the upstream artifacts (default: the output directory).
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Spectrum => "spectrum",
            Command::Moments => "moments",
            Command::Survive => "survive",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Report { .. } => "report",
        }
    }
}

fn output_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = &cli.out {
        return dir.clone();
    }
    if let Some(root) = std::env::var_os("FKBRANCH_OUT") {
        return Path::new(&root).join(&cfg.name);
    }
    cfg.output
        .dir
        .clone()
        .unwrap_or_else(|| Path::new("fkbranch-out").join(&cfg.name))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let Some(path) = &cli.config else {
        anyhow::bail!("--config is required");
    };
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.mc.seed = seed;
    }
    let dir = output_dir(&cli, &cfg);
    let mut out = Artifacts::create(&dir, Meta::new(&cfg))?;
    let mut code = ExitCode::SUCCESS;
    let name = cli.command.name();
    let status = match cli.command.clone() {
        Command::Validate => {
            if commands::validate(&Setup::new(&cfg, cli.regime)?, &mut out)? {
                "pass"
            } else {
                code = ExitCode::from(2);
                "fail"
            }
        }
        Command::Report { artifacts } => {
            let src = artifacts.unwrap_or_else(|| dir.clone());
            commands::report(&cfg, &src, &mut out)?;
            "ok"
        }
        command => {
            let setup = Setup::new(&cfg, cli.regime)?;
            match command {
                Command::Spectrum => commands::spectrum(&cfg, &setup, &mut out)?,
                Command::Moments => commands::moments(&cfg, &setup, &mut out)?,
                Command::Survive => commands::survive(&cfg, &setup, &mut out)?,
                Command::Simulate => commands::simulate_cmd(&cfg, &setup, &mut out)?,
                Command::Verify => {
                    let manifest = verify::verify(&cfg, &setup, &mut out)?;
                    if !manifest.hard_passed {
                        code = ExitCode::FAILURE;
                    }
                }
                _ => unreachable!(),
            }
            if code == ExitCode::SUCCESS {
                "ok"
            } else {
                "hard assertion failed"
            }
        }
    };
    out.finish(name, status)?;
    Ok(code)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
