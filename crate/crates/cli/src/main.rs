//! `epichaos` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::NumericalFailure;
use output::OutputDir;

#[derive(Debug, Parser)]
#[command(name = "epichaos", version, about = "Polynomial chaos UQ and Sobol analysis for epidemic models")]
struct Cli {
    /// TOML run configuration; defaults apply to everything not set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default `results`; quad-check writes files only when given).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Quadrature order (case1, case2 uq) or largest rule size (quad-check).
    #[arg(long, global = true)]
    order: Option<usize>,
    /// Seed for synthetic noise and fit start jitter.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quadrature exactness and orthonormality sweep.
    QuadCheck,
    /// SEIR peak time and size under uncertain R0 and durations.
    Case1,
    /// Superspreader model: fit to admissions data, or propagate restriction uncertainty.
    Case2 {
        #[command(subcommand)]
        step: Case2Step,
    },
    /// Synthetic admissions data from the configured model.
    Synth,
}

#[derive(Debug, Subcommand)]
enum Case2Step {
    /// Two-stage least-squares fit.
    Fit {
        /// Admissions CSV (`date,day,admissions`).
        #[arg(long)]
        data: PathBuf,
    },
    /// Uncertainty propagation around fitted restriction levels.
    Uq {
        /// `case2_fit.json` from a previous fit; otherwise the config's model block is used.
        #[arg(long)]
        fit: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::QuadCheck => "quad-check",
            Command::Case1 => "case1",
            Command::Case2 { step: Case2Step::Fit { .. } } => "case2 fit",
            Command::Case2 { step: Case2Step::Uq { .. } } => "case2 uq",
            Command::Synth => "synth",
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    if let Some(n) = commands::thread_count()? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut config = commands::load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(q) = cli.order {
        match cli.command {
            Command::QuadCheck => config.quad_check.max_points = q,
            Command::Case1 => config.case1.order = q,
            Command::Case2 { step: Case2Step::Uq { .. } } => config.uq.order = q,
            _ => anyhow::bail!("--order does not apply to {}", cli.command.name()),
        }
    }
    config.validate()?;
    let resolved = config.to_toml();
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("results"));

    let code = match &cli.command {
        Command::QuadCheck => match &cli.out {
            Some(dir) => commands::quad_check(&config, Some(&mut OutputDir::create(dir, &resolved, "quad-check")?))?,
            None => commands::quad_check(&config, None)?,
        },
        cmd => {
            let mut out = OutputDir::create(&out_dir, &resolved, cmd.name())?;
            let code = match cmd {
                Command::Case1 => commands::case1(&config, &mut out)?,
                Command::Case2 { step: Case2Step::Fit { data } } => commands::case2_fit(&config, data, &mut out)?,
                Command::Case2 { step: Case2Step::Uq { fit } } => commands::case2_uq(&config, fit.as_deref(), &mut out)?,
                Command::Synth => commands::synth(&config, &mut out)?,
                Command::QuadCheck => unreachable!(),
            };
            for path in out.written() {
                println!("wrote {}", path.display());
            }
            code
        }
    };
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<NumericalFailure>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
