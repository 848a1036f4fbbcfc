use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use log::{error, LevelFilter};
use sparsepower_cli::args::Cli;
use sparsepower_cli::error::CliError;
use sparsepower_cli::{out_path, run};

fn emit(cli: &Cli, bytes: &[u8]) -> Result<(), CliError> {
    match out_path(cli) {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::config(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::config(format!("stdout: {e}")))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        LevelFilter::Error
    } else {
        match cli.verbose {
            0 => LevelFilter::Warn,
            1 => LevelFilter::Info,
            _ => LevelFilter::Debug,
        }
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).target(env_logger::Target::Stderr).init();

    match run(&cli).and_then(|bytes| emit(&cli, &bytes)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.code as u8)
        }
    }
}
