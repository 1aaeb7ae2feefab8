use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use psgd_cli::args::{Cli, Command};
use psgd_cli::{fit, runner, verify, Result};
use serde::Serialize;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(2)
        }
    }
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => eprintln!("{text}"),
    }
    Ok(())
}

fn run(command: Command) -> Result<ExitCode> {
    if let Some(cfg) = command.experiment() {
        let cfg = cfg?;
        log::info!(
            "{} with {} over {} seed(s), {} iterations",
            cfg.testbed.name(),
            cfg.precond,
            cfg.seeds.len(),
            cfg.iters
        );
        let summary = runner::run_experiment(&cfg, sink(cfg.out.as_deref())?)?;
        write_json(cfg.summary_json.as_deref(), &summary)?;
        return Ok(ExitCode::SUCCESS);
    }
    match command {
        Command::FitOnly(args) => {
            let summary = fit::run_fit(&args, sink(args.out.as_deref())?)?;
            write_json(args.summary_json.as_deref(), &summary)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(args) => {
            let report = verify::verify(args.suite)?;
            println!("{report}");
            if let Some(path) = &args.json {
                write_json(Some(path), &report)?;
            }
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        _ => unreachable!("optimization subcommands are handled above"),
    }
}
