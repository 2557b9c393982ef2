//! `curlab` command-line entry point.

mod args;
mod commands;
mod config;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Env;
use error::{CliError, Context};

fn run(argv: Vec<String>) -> Result<ExitCode, CliError> {
    let (argv, config) = config::expand(argv)?;
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return Ok(ExitCode::from(code));
        }
    };

    env_logger::Builder::new()
        .filter_level(match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .parse_default_env()
        .init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::new("usage", "--threads must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    pool.build_global().cat("runtime")?;

    let env = Env {
        seed: cli.seed,
        counter: curlab::corpus::counter_by_name(&cli.counter).cat("corpus")?,
    };
    let artifacts = match &cli.command {
        Command::Sample(a) => commands::sample(a, &env),
        Command::Filter(a) => commands::filter(a, &env),
        Command::Inject(a) => commands::inject(a, &env),
        Command::Ingest(a) => commands::ingest(a),
        Command::Validate(a) => commands::validate(a),
        Command::Report(a) => commands::report(a),
        Command::Pareto(a) => commands::pareto(a),
        Command::Crossing(a) => commands::crossing(a),
        Command::ScalingLaw(a) => commands::scaling_law(a),
        Command::Extrapolate(a) => commands::extrapolate(a),
        Command::SliceLoss(a) => commands::slice_loss(a),
        Command::VerifyTheory(a) => commands::verify_theory(a, &env),
        Command::Judge(a) => commands::judge(a, &env),
    }?;
    if let Some(path) = manifest::write_manifest(&argv, cli.command.name(), config.as_ref(), &artifacts)? {
        log::info!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(if e.category == "usage" { 2 } else { 1 })
        }
    }
}
