use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sparsepower", version, about = "Power and sample size for two-sample tests on sparse functional data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    /// Only errors on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Theoretical power at one sample size (optionally a power-vs-n curve).
    Power(RunArgs),
    /// Minimum sample size reaching a target power.
    Samplesize(RunArgs),
    /// Theoretical and empirical power over a grid of cells.
    Validate(ValidateArgs),
    /// Hotelling test on user data in CSV form.
    Test(TestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,

    /// Bundled config by name, e.g. `table1-case2-medium`.
    #[arg(long)]
    pub preset: Option<String>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Monte Carlo draws of the non-null variate.
    #[arg(long)]
    pub draws: Option<usize>,

    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// Worker threads (results do not depend on this).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Empirical replications (samplesize: checks power at n*).
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    KnownEigen,
    EmpiricalFpca,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Empirical replications per cell (0 = theoretical only).
    #[arg(long)]
    pub reps: Option<usize>,

    /// Override the estimation mode of the empirical column.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// CSV with header `subject_id,group,time,value`.
    pub csv: PathBuf,

    /// JSON options (pve, alpha, grid_size, bandwidths).
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub pve: Option<f64>,

    #[arg(long)]
    pub alpha: Option<f64>,

    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    #[arg(long)]
    pub threads: Option<usize>,
}
