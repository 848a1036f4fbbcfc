//! Monte Carlo validation: empirical power over replicated datasets,
//! missing-data sweeps, and theoretical-versus-empirical comparison tables.

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigengrid::{eigen_from_kernel, EigenSystem};
use crate::error::{invalid, Result};
use crate::fpca::{fpca_fit, FpcaOptions};
use crate::pass::{prepare_model, seed_streams, ModelSpec, PowerMode, PowerRequest, PowerResult};
use crate::probdist::RngStream;
use crate::process::{generate_dataset, Group, MeanDiff, SparseDataset};
use crate::shrinkage::blup_scores;
use crate::testkit::hotelling_test;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    /// True eigensystem, kernel and τ².
    KnownEigen,
    /// Everything re-estimated per replicate by sparse fPCA.
    #[default]
    EmpiricalFpca,
}

fn default_fpca_grid() -> usize {
    50
}

/// One empirical-power configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub model: ModelSpec,
    pub n1: usize,
    pub n2: usize,
    pub alpha: f64,
    pub reps: usize,
    pub mode: EstimationMode,
    #[serde(default = "default_fpca_grid")]
    pub fpca_grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalPower {
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub rejections: usize,
    pub successes: usize,
    pub failures: usize,
    pub reps: usize,
    /// Average number of components used across successful replicates.
    pub mean_k: f64,
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn known_eigen_test(data: &SparseDataset, eig: &EigenSystem, tau2: f64, alpha: f64) -> Result<(bool, usize)> {
    let mut g1 = Vec::new();
    let mut g2 = Vec::new();
    for s in &data.subjects {
        let z = blup_scores(&s.times, &s.values, eig, tau2, &|_| 0.0)?;
        match s.group {
            Group::One => g1.push(z),
            Group::Two => g2.push(z),
        }
    }
    let r = hotelling_test(&g1, &g2, alpha)?;
    Ok((r.reject, r.k))
}

fn check_cell(cell: &Cell) -> Result<()> {
    cell.model.validate()?;
    if cell.reps < 100 {
        return Err(invalid(format!("need at least 100 replications, got {}", cell.reps)));
    }
    if cell.n1 < 2 || cell.n2 < 2 {
        return Err(invalid("each group needs at least 2 subjects"));
    }
    if !(cell.alpha > 0.0 && cell.alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {}", cell.alpha)));
    }
    Ok(())
}

/// Rejection rate over `cell.reps` simulated datasets; replicate `r` uses
/// `rng.substream(r)`. Failed replicates are counted, not dropped.
pub fn empirical_power(rng: &RngStream, cell: &Cell) -> Result<EmpiricalPower> {
    check_cell(cell)?;
    let m = &cell.model;
    let eig = match cell.mode {
        EstimationMode::KnownEigen => Some(eigen_from_kernel(&m.kernel, m.grid_size, m.pve)?),
        EstimationMode::EmpiricalFpca => None,
    };
    let opts = FpcaOptions { grid_size: cell.fpca_grid, pve: m.pve, ..FpcaOptions::default() };
    opts.validate()?;
    let outcomes: Vec<Option<(bool, usize)>> = (0..cell.reps)
        .into_par_iter()
        .map(|r| {
            let stream = rng.substream(r as u64);
            let run = || -> Result<(bool, usize)> {
                let data = generate_dataset(&stream, cell.n1, cell.n2, &m.meandiff, &m.kernel, &m.design, m.tau2)?;
                match &eig {
                    Some(e) => known_eigen_test(&data, e, m.tau2, cell.alpha),
                    None => {
                        let fit = fpca_fit(&data, &opts)?;
                        let res = hotelling_test(&fit.scores.group1, &fit.scores.group2, cell.alpha)?;
                        Ok((res.reject, res.k))
                    }
                }
            };
            match run() {
                Ok(v) => Some(v),
                Err(e) => {
                    debug!("replicate {r} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let successes = outcomes.iter().flatten().count();
    let failures = cell.reps - successes;
    let rejections = outcomes.iter().flatten().filter(|(rej, _)| *rej).count();
    let mean_k = outcomes.iter().flatten().map(|(_, k)| *k as f64).sum::<f64>() / successes.max(1) as f64;
    if failures * 100 >= cell.reps {
        warn!("{failures} of {} replicates failed", cell.reps);
    }
    let (ci_low, ci_high) = wilson_interval(rejections, successes);
    Ok(EmpiricalPower {
        rate: if successes > 0 { rejections as f64 / successes as f64 } else { f64::NAN },
        ci_low,
        ci_high,
        rejections,
        successes,
        failures,
        reps: cell.reps,
        mean_k,
    })
}

/// Theoretical power at each missing probability, all under the seed of
/// `req`, so `p = 0` reproduces the plain power calculation exactly.
pub fn missing_sweep(req: &PowerRequest, probabilities: &[f64]) -> Result<Vec<(f64, PowerResult)>> {
    probabilities
        .iter()
        .map(|&p| {
            let mut r = req.clone();
            r.model.design.missing = p;
            crate::pass::algorithm1_power(&r).map(|res| (p, res))
        })
        .collect()
}

/// One row of a theoretical-versus-empirical table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub label: String,
    pub theoretical: f64,
    pub empirical: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub gap: f64,
    /// Theoretical value outside the empirical interval widened by `allowance`.
    pub flagged: bool,
}

pub const COMPARE_ALLOWANCE: f64 = 0.05;

pub fn compare_report(rows: &[(String, f64, EmpiricalPower)]) -> Vec<Comparison> {
    rows.iter()
        .map(|(label, theo, emp)| Comparison {
            label: label.clone(),
            theoretical: *theo,
            empirical: emp.rate,
            ci_low: emp.ci_low,
            ci_high: emp.ci_high,
            gap: (theo - emp.rate).abs(),
            flagged: *theo < emp.ci_low - COMPARE_ALLOWANCE || *theo > emp.ci_high + COMPARE_ALLOWANCE,
        })
        .collect()
}

fn default_alpha() -> f64 {
    0.05
}
fn default_draws() -> usize {
    crate::pass::DEFAULT_POWER_DRAWS
}
fn default_missing() -> Vec<f64> {
    vec![0.0]
}

/// Factorial grid of η scales, total sample sizes (equal groups) and missing
/// percentages on a base model whose mean difference is scaled by each η.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub model: ModelSpec,
    pub etas: Vec<f64>,
    /// Total sample sizes; split evenly between groups.
    pub sizes: Vec<usize>,
    #[serde(default = "default_missing")]
    pub missing: Vec<f64>,
    /// Empirical replications per cell; 0 skips the empirical column.
    #[serde(default)]
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub mode: EstimationMode,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fpca_grid")]
    pub fpca_grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub eta: f64,
    pub n: usize,
    pub missing: f64,
    pub k: usize,
    pub theoretical: f64,
    pub theoretical_se: f64,
    pub empirical: Option<EmpiricalPower>,
    pub flagged: Option<bool>,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.etas.is_empty() || self.sizes.is_empty() || self.missing.is_empty() {
            return Err(invalid("experiment grid is empty"));
        }
        if self.sizes.iter().any(|&n| n < 4 || n % 2 != 0) {
            return Err(invalid("sizes must be even totals of at least 4"));
        }
        if self.reps != 0 && self.reps < 100 {
            return Err(invalid(format!("reps must be 0 or at least 100, got {}", self.reps)));
        }
        if self.missing.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(invalid("missing probabilities must lie in [0, 1)"));
        }
        if self.etas.iter().any(|e| !e.is_finite()) {
            return Err(invalid("eta values must be finite"));
        }
        self.model.validate()
    }
}

/// Runs every cell. The theoretical column for each `(η, missing)` pair
/// shares one prepared model and one power stream across sizes.
pub fn run_grid(grid: &ExperimentGrid) -> Result<Vec<GridRow>> {
    grid.validate()?;
    let root = RngStream::new(grid.seed);
    let mut rows = Vec::new();
    for (i, &eta) in grid.etas.iter().enumerate() {
        for (j, &p) in grid.missing.iter().enumerate() {
            let mut model = grid.model.clone();
            model.meandiff = scale_meandiff(&grid.model.meandiff, eta);
            model.design.missing = p;
            let tag = (i * grid.missing.len() + j) as u64;
            let base = root.substream(tag);
            let (prep, power_rng) = seed_streams(base.key());
            let prepared = prepare_model(&prep, &model)?;
            for (l, &n) in grid.sizes.iter().enumerate() {
                let n2 = n / 2;
                let theo = prepared.power(&power_rng, 1.0, n2, grid.alpha, grid.draws, PowerMode::Exact)?;
                let empirical = if grid.reps > 0 {
                    let cell = Cell {
                        model: model.clone(),
                        n1: n - n2,
                        n2,
                        alpha: grid.alpha,
                        reps: grid.reps,
                        mode: grid.mode,
                        fpca_grid: grid.fpca_grid,
                    };
                    Some(empirical_power(&base.substream2(2, l as u64), &cell)?)
                } else {
                    None
                };
                let flagged = empirical.as_ref().map(|e| {
                    compare_report(&[(String::new(), theo.power, e.clone())])[0].flagged
                });
                rows.push(GridRow {
                    eta,
                    n,
                    missing: p,
                    k: theo.k,
                    theoretical: theo.power,
                    theoretical_se: theo.se,
                    empirical,
                    flagged,
                });
            }
        }
    }
    Ok(rows)
}

fn scale_meandiff(base: &MeanDiff, eta: f64) -> MeanDiff {
    base.scaled(eta)
}
