//! Run configurations: JSON files or bundled presets, validated up front.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sparsepower::harness::{EstimationMode, ExperimentGrid};
use sparsepower::pass::{ModelSpec, PowerMode, DEFAULT_POWER_DRAWS};

use crate::error::{CliError, CliResult};

fn default_kappa() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.05
}
fn default_draws() -> usize {
    DEFAULT_POWER_DRAWS
}
fn default_etas() -> Vec<f64> {
    vec![1.0]
}
fn default_n2_max() -> usize {
    100_000
}
fn default_fpca_grid() -> usize {
    50
}

/// `power`: one sample size, given as a total `n` (split by κ) or as `n2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: PowerMode,
    /// Extra total sizes for a power-vs-n curve.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curve: Vec<usize>,
}

/// Group-2 size whose total `⌈κ n₂⌉ + n₂` is closest to `n`.
pub fn split_total(n: usize, kappa: f64) -> usize {
    ((n as f64 / (1.0 + kappa)).round() as usize).max(2)
}

impl PowerConfig {
    pub fn group2_size(&self) -> CliResult<usize> {
        match (self.n, self.n2) {
            (Some(n), None) => Ok(split_total(n, self.kappa)),
            (None, Some(n2)) => Ok(n2),
            _ => Err(CliError::config("give exactly one of `n` (total) or `n2`")),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.group2_size()?;
        check_common(self.kappa, self.alpha, self.draws)?;
        if self.curve.iter().any(|&n| n < 4) {
            return Err(CliError::config("curve sizes must be at least 4"));
        }
        Ok(())
    }
}

/// `samplesize`: every combination of effect scale η and target power γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSizeConfig {
    pub model: ModelSpec,
    pub targets: Vec<f64>,
    /// Multipliers applied to `model.meandiff`.
    #[serde(default = "default_etas")]
    pub etas: Vec<f64>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: PowerMode,
    #[serde(default = "default_n2_max")]
    pub n2_max: usize,
    /// Empirical replications at the minimum size (0 skips the check).
    #[serde(default)]
    pub reps: usize,
    #[serde(default)]
    pub estimation: EstimationMode,
    #[serde(default = "default_fpca_grid")]
    pub fpca_grid: usize,
}

impl SampleSizeConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        check_common(self.kappa, self.alpha, self.draws)?;
        if self.targets.is_empty() || self.etas.is_empty() {
            return Err(CliError::config("targets and etas must be nonempty"));
        }
        if let Some(g) = self.targets.iter().find(|&&g| !(g > self.alpha && g < 1.0)) {
            return Err(CliError::config(format!("target power {g} must lie in (alpha, 1) = ({}, 1)", self.alpha)));
        }
        if self.etas.iter().any(|e| !e.is_finite() || *e == 0.0) {
            return Err(CliError::config("etas must be finite and nonzero"));
        }
        if self.reps != 0 && self.reps < 100 {
            return Err(CliError::config(format!("reps must be 0 or at least 100, got {}", self.reps)));
        }
        Ok(())
    }
}

fn check_common(kappa: f64, alpha: f64, draws: usize) -> CliResult<()> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(CliError::config(format!("kappa must be positive, got {kappa}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if draws < 1000 {
        return Err(CliError::config(format!("draws must be at least 1000, got {draws}")));
    }
    Ok(())
}

pub fn validate_grid(grid: &ExperimentGrid) -> CliResult<()> {
    grid.validate()?;
    check_common(1.0, grid.alpha, grid.draws)
}

fn default_test_pve() -> f64 {
    sparsepower::eigengrid::DEFAULT_PVE
}
fn default_test_grid() -> usize {
    50
}
fn default_mean_bw() -> f64 {
    0.1
}
fn default_cov_bw() -> f64 {
    0.15
}

/// Options of the `test` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    #[serde(default = "default_test_pve")]
    pub pve: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_test_grid")]
    pub grid_size: usize,
    #[serde(default = "default_mean_bw")]
    pub mean_bandwidth: f64,
    #[serde(default = "default_cov_bw")]
    pub cov_bandwidth: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

/// Which subcommand a bundled preset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    Power,
    Samplesize,
    Validate,
}

pub const PRESETS: &[(&str, PresetKind, &str)] = &[
    ("table1-case2-low", PresetKind::Validate, include_str!("../configs/table1-case2-low.json")),
    ("table1-case2-medium", PresetKind::Validate, include_str!("../configs/table1-case2-medium.json")),
    ("table1-case3-medium", PresetKind::Validate, include_str!("../configs/table1-case3-medium.json")),
    ("table2-case2-low", PresetKind::Validate, include_str!("../configs/table2-case2-low.json")),
    ("table3-case2-medium", PresetKind::Samplesize, include_str!("../configs/table3-case2-medium.json")),
    ("table3-case3-medium", PresetKind::Samplesize, include_str!("../configs/table3-case3-medium.json")),
    ("null-size", PresetKind::Validate, include_str!("../configs/null-size.json")),
    ("power-case3-medium", PresetKind::Power, include_str!("../configs/power-case3-medium.json")),
];

pub fn preset(name: &str, kind: PresetKind) -> CliResult<&'static str> {
    match PRESETS.iter().find(|(n, _, _)| *n == name) {
        Some((_, k, text)) if *k == kind => Ok(text),
        Some((_, k, _)) => Err(CliError::config(format!(
            "preset `{name}` is a {} config",
            match k {
                PresetKind::Power => "power",
                PresetKind::Samplesize => "samplesize",
                PresetKind::Validate => "validate",
            }
        ))),
        None => {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _, _)| *n).collect();
            Err(CliError::config(format!("unknown preset `{name}`; available: {}", names.join(", "))))
        }
    }
}

pub fn parse<T: DeserializeOwned>(text: &str, origin: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::config(format!("{origin}: {e}")))
}

pub fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))
}

/// Loads from `--config` or `--preset`.
pub fn load<T: DeserializeOwned>(config: Option<&Path>, preset_name: Option<&str>, kind: PresetKind) -> CliResult<T> {
    match (config, preset_name) {
        (Some(path), None) => parse(&read_file(path)?, &path.display().to_string()),
        (None, Some(name)) => parse(preset(name, kind)?, name),
        (None, None) => Err(CliError::config("need --config FILE or --preset NAME")),
        (Some(_), Some(_)) => Err(CliError::config("--config and --preset are mutually exclusive")),
    }
}
