//! Command-line front end: config loading, subcommand dispatch, report output.

pub mod args;
pub mod commands;
pub mod config;
pub mod csv_input;
pub mod error;
pub mod report;

use std::path::Path;

use sparsepower::harness::{EstimationMode, ExperimentGrid};

use args::{Cli, Command, CommonArgs, Format, ModeArg, TestArgs, ValidateArgs};
use config::{PowerConfig, PresetKind, SampleSizeConfig, TestConfig};
use error::{CliError, CliResult};

fn load<T: serde::de::DeserializeOwned>(c: &CommonArgs, kind: PresetKind) -> CliResult<T> {
    config::load(c.config.as_deref(), c.preset.as_deref(), kind)
}

/// Runs on a dedicated pool when `--threads` is given. Results do not depend
/// on the thread count; this only bounds CPU use.
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    match threads {
        None => f(),
        Some(0) => Err(CliError::config("--threads must be at least 1")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::numerical(format!("cannot start thread pool: {e}")))?
            .install(f),
    }
}

fn power(c: &CommonArgs, reps: Option<usize>) -> CliResult<Vec<u8>> {
    if reps.is_some() {
        return Err(CliError::config("--reps applies to samplesize and validate"));
    }
    let mut cfg: PowerConfig = load(c, PresetKind::Power)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(d) = c.draws {
        cfg.draws = d;
    }
    let r = with_threads(c.threads, || commands::power(&cfg))?;
    match c.format {
        Format::Json => report::json("power", &cfg, &r),
        Format::Csv => report::power_csv(&r),
    }
}

fn samplesize(c: &CommonArgs, reps: Option<usize>) -> CliResult<Vec<u8>> {
    let mut cfg: SampleSizeConfig = load(c, PresetKind::Samplesize)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(d) = c.draws {
        cfg.draws = d;
    }
    if let Some(r) = reps {
        cfg.reps = r;
    }
    let rows = with_threads(c.threads, || commands::samplesize(&cfg))?;
    match c.format {
        Format::Json => report::json("samplesize", &cfg, &rows),
        Format::Csv => report::samplesize_csv(&rows),
    }
}

fn validate(a: &ValidateArgs) -> CliResult<Vec<u8>> {
    let c = &a.common;
    let mut grid: ExperimentGrid = load(c, PresetKind::Validate)?;
    if let Some(s) = c.seed {
        grid.seed = s;
    }
    if let Some(d) = c.draws {
        grid.draws = d;
    }
    if let Some(r) = a.reps {
        grid.reps = r;
    }
    if let Some(m) = a.mode {
        grid.mode = match m {
            ModeArg::KnownEigen => EstimationMode::KnownEigen,
            ModeArg::EmpiricalFpca => EstimationMode::EmpiricalFpca,
        };
    }
    let rows = with_threads(c.threads, || commands::validate(&grid))?;
    match c.format {
        Format::Json => report::json("validate", &grid, &rows),
        Format::Csv => report::validate_csv(&rows),
    }
}

#[derive(serde::Serialize)]
struct TestInput<'a> {
    csv: String,
    #[serde(flatten)]
    options: &'a TestConfig,
}

fn test(a: &TestArgs) -> CliResult<Vec<u8>> {
    let mut cfg = match &a.config {
        Some(p) => config::parse(&config::read_file(p)?, &p.display().to_string())?,
        None => TestConfig::default(),
    };
    if let Some(p) = a.pve {
        cfg.pve = p;
    }
    if let Some(al) = a.alpha {
        cfg.alpha = al;
    }
    let file = std::fs::File::open(&a.csv).map_err(|e| CliError::config(format!("cannot read {}: {e}", a.csv.display())))?;
    let data = csv_input::read_csv(std::io::BufReader::new(file))?;
    let r = with_threads(a.threads, || commands::test(&data, &cfg))?;
    match a.format {
        Format::Json => report::json("test", &TestInput { csv: a.csv.display().to_string(), options: &cfg }, &r),
        Format::Csv => report::test_csv(&r),
    }
}

/// Executes the parsed command and returns the report bytes.
pub fn run(cli: &Cli) -> CliResult<Vec<u8>> {
    match &cli.command {
        Command::Power(a) => power(&a.common, a.reps),
        Command::Samplesize(a) => samplesize(&a.common, a.reps),
        Command::Validate(a) => validate(a),
        Command::Test(a) => test(a),
    }
}

/// Where the report goes: `--out` if given, stdout otherwise.
pub fn out_path(cli: &Cli) -> Option<&Path> {
    match &cli.command {
        Command::Power(a) | Command::Samplesize(a) => a.common.out.as_deref(),
        Command::Validate(a) => a.common.out.as_deref(),
        Command::Test(a) => a.out.as_deref(),
    }
}
