//! Subcommand bodies. Each returns a serializable result; rendering lives in
//! `report`.

use log::info;
use serde::Serialize;
use sparsepower::fpca::{fpca_fit, FpcaOptions};
use sparsepower::harness::{empirical_power, run_grid, Cell, EmpiricalPower, ExperimentGrid, GridRow};
use sparsepower::pass::{prepare_model, search_samplesize, seed_streams, PowerResult};
use sparsepower::probdist::RngStream;
use sparsepower::testkit::{hotelling_test, TestResult};

use crate::config::{split_total, validate_grid, PowerConfig, SampleSizeConfig, TestConfig};
use crate::csv_input::CsvData;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub n1: usize,
    pub n2: usize,
    pub n: usize,
    pub power: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerReport {
    #[serde(flatten)]
    pub result: PowerResult,
    pub n: usize,
    /// Retained eigenvalues of the covariance operator.
    pub lambdas: Vec<f64>,
    pub curve: Vec<CurvePoint>,
}

pub fn power(cfg: &PowerConfig) -> CliResult<PowerReport> {
    cfg.validate()?;
    let (prep, power_rng) = seed_streams(cfg.seed);
    let prepared = prepare_model(&prep, &cfg.model)?;
    let n2 = cfg.group2_size()?;
    let result = prepared.power(&power_rng, cfg.kappa, n2, cfg.alpha, cfg.draws, cfg.mode)?;
    info!("power {:.4} (se {:.4}) at n1 = {}, n2 = {n2}, K = {}", result.power, result.se, result.n1, result.k);
    let mut curve = Vec::with_capacity(cfg.curve.len());
    for &n in &cfg.curve {
        let m2 = split_total(n, cfg.kappa);
        let r = prepared.power(&power_rng, cfg.kappa, m2, cfg.alpha, cfg.draws, cfg.mode)?;
        curve.push(CurvePoint { n1: r.n1, n2: m2, n: r.n1 + m2, power: r.power, se: r.se });
    }
    Ok(PowerReport { n: result.n1 + result.n2, lambdas: prepared.eigen.values.clone(), result, curve })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSizeRow {
    pub eta: f64,
    pub target: f64,
    pub n1: usize,
    pub n2: usize,
    pub total: usize,
    pub power: f64,
    /// Power at `n₂* − 1`, evaluated with the same draws.
    pub power_below: Option<f64>,
    pub k: usize,
    pub delta: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub empirical: Option<EmpiricalPower>,
}

pub fn samplesize(cfg: &SampleSizeConfig) -> CliResult<Vec<SampleSizeRow>> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let mut rows = Vec::new();
    for (i, &eta) in cfg.etas.iter().enumerate() {
        let mut model = cfg.model.clone();
        model.meandiff = cfg.model.meandiff.scaled(eta);
        let base = root.substream(i as u64);
        let (prep, power_rng) = seed_streams(base.key());
        let prepared = prepare_model(&prep, &model)?;
        for (j, &target) in cfg.targets.iter().enumerate() {
            let r = search_samplesize(&prepared, &power_rng, target, cfg.kappa, cfg.alpha, cfg.draws, cfg.mode, cfg.n2_max)?;
            let empirical = if cfg.reps > 0 {
                let cell = Cell {
                    model: model.clone(),
                    n1: r.n1,
                    n2: r.n2,
                    alpha: cfg.alpha,
                    reps: cfg.reps,
                    mode: cfg.estimation,
                    fpca_grid: cfg.fpca_grid,
                };
                Some(empirical_power(&base.substream2(2, j as u64), &cell)?)
            } else {
                None
            };
            rows.push(SampleSizeRow {
                eta,
                target,
                n1: r.n1,
                n2: r.n2,
                total: r.total,
                power: r.power,
                power_below: r.power_below,
                k: r.k,
                delta: r.delta,
                lambdas: prepared.eigen.values.clone(),
                empirical,
            });
        }
    }
    Ok(rows)
}

pub fn validate(grid: &ExperimentGrid) -> CliResult<Vec<GridRow>> {
    validate_grid(grid)?;
    Ok(run_grid(grid)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectCurve {
    /// Grid on the rescaled `[0, 1]` axis.
    pub grid: Vec<f64>,
    /// The same grid in the units of the input `time` column.
    pub time: Vec<f64>,
    /// Estimated `μ̂₂ − μ̂₁`.
    pub difference: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    #[serde(flatten)]
    pub test: TestResult,
    /// Estimated measurement-error variance.
    pub tau2: f64,
    pub eigenvalues: Vec<f64>,
    pub pve_achieved: f64,
    pub observations: usize,
    pub missing_values: usize,
    pub effect: EffectCurve,
}

pub fn test(data: &CsvData, cfg: &TestConfig) -> CliResult<TestReport> {
    let opts = FpcaOptions {
        grid_size: cfg.grid_size,
        pve: cfg.pve,
        mean_bandwidth: cfg.mean_bandwidth,
        cov_bandwidth: cfg.cov_bandwidth,
        ..FpcaOptions::default()
    };
    opts.validate()?;
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(CliError::config(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    data.dataset.validate()?;
    let fit = fpca_fit(&data.dataset, &opts)?;
    let test = hotelling_test(&fit.scores.group1, &fit.scores.group2, cfg.alpha)?;
    info!("T = {:.4}, K = {}, p = {:.4}", test.statistic, test.k, test.p_value);
    let span = data.time_max - data.time_min;
    Ok(TestReport {
        tau2: fit.tau2,
        eigenvalues: fit.eigen.values.clone(),
        pve_achieved: fit.eigen.pve_achieved,
        observations: data.dataset.total_points(),
        missing_values: data.missing_values,
        effect: EffectCurve {
            time: fit.grid.iter().map(|t| data.time_min + t * span).collect(),
            difference: fit.effect_curve(),
            grid: fit.grid.clone(),
        },
        test,
    })
}

