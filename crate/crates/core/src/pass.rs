//! Non-null distribution of the Hotelling statistic on shrinkage scores, the
//! theoretical power function, and the minimum sample size search.
//!
//! Power is always Monte Carlo: draws of
//! `Σ_k d_k⁻¹ χ²₁(ncp_k) / (χ²_{ν−K+1}/ν)` compared with the rescaled F
//! threshold.

use std::collections::BTreeMap;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigengrid::{eigen_from_kernel, EigenSystem, DEFAULT_GRID, DEFAULT_PVE};
use crate::error::{invalid, Error, Result};
use crate::fpca::{fpca_fit, FpcaOptions};
use crate::linalg::{chol_spd, inv_sqrt_spd, sym_eigen, trace, Matrix};
use crate::probdist::{chisq_quantile, chisq_sample, f_quantile, standard_normal, RngStream};
use crate::process::{generate_dataset, CovarianceKernel, MeanDiff, SamplingDesign};
use crate::shrinkage::{design_moments, WorkingCovariance, DEFAULT_DESIGN_DRAWS};

pub const DEFAULT_POWER_DRAWS: usize = 100_000;
const BLOCK: usize = 4096;

/// Everything the non-null law needs at one `(κ, n₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonNullSpec {
    pub delta: Vec<f64>,
    pub lambda1: Matrix,
    pub lambda2: Matrix,
    pub kappa: f64,
    /// `κ n₂` (real).
    pub n1: f64,
    pub n2: usize,
    pub lambda_dag: Matrix,
    pub lambda_dag_inv_sqrt: Matrix,
    pub omega: Matrix,
    pub omega_dag: Matrix,
    pub d: Vec<f64>,
    pub u: Matrix,
    pub ncp: Vec<f64>,
    pub nu: f64,
}

impl NonNullSpec {
    pub fn k(&self) -> usize {
        self.delta.len()
    }

    /// Integer first-group size `⌈κ n₂⌉`.
    pub fn n1_int(&self) -> usize {
        group1_size(self.kappa, self.n2)
    }

    pub fn n_total(&self) -> usize {
        self.n1_int() + self.n2
    }

    /// Threshold on the variate scale: `K n₂ (1 + 1/κ) F_α(K, n−K−1)/(n−K−1)`.
    pub fn threshold(&self, alpha: f64) -> Result<f64> {
        let k = self.k();
        let n = self.n_total();
        if n < k + 2 {
            return Err(invalid(format!("need n - K - 1 >= 1 (K = {k}, n = {n})")));
        }
        let d2 = (n - k - 1) as f64;
        let q = f_quantile(1.0 - alpha, k as f64, d2)?;
        Ok(k as f64 * self.n2 as f64 * (1.0 + 1.0 / self.kappa) * q / d2)
    }
}

pub fn group1_size(kappa: f64, n2: usize) -> usize {
    // tolerate roundoff in κ n₂ that is meant to be integral
    (kappa * n2 as f64 - 1e-9).ceil().max(1.0) as usize
}

fn check_square(m: &Matrix, k: usize, name: &str) -> Result<()> {
    if m.rows() != k || m.cols() != k {
        return Err(invalid(format!("{name} is {}x{}, expected {k}x{k}", m.rows(), m.cols())));
    }
    chol_spd(&m.symmetrize()).map_err(|e| Error::SingularCovariance(format!("{name} is not SPD: {e}")))?;
    Ok(())
}

fn sq_trace(a: &Matrix) -> f64 {
    a.data().iter().map(|x| x * x).sum()
}

/// Derived quantities of the non-null law.
pub fn build_nonnull(delta: &[f64], lambda1: &Matrix, lambda2: &Matrix, kappa: f64, n2: usize) -> Result<NonNullSpec> {
    let k = delta.len();
    if k == 0 {
        return Err(invalid("Δ must have at least one component"));
    }
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(invalid("Δ must be finite"));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(invalid(format!("allocation ratio must be positive, got {kappa}")));
    }
    if n2 < 2 {
        return Err(invalid(format!("n2 must be at least 2, got {n2}")));
    }
    check_square(lambda1, k, "Λ₁")?;
    check_square(lambda2, k, "Λ₂")?;
    let (l1, l2) = (lambda1.symmetrize(), lambda2.symmetrize());
    let mut dag = l1.clone();
    dag.add_scaled(&l2, kappa);
    let dag_is = inv_sqrt_spd(&dag)?;
    let omega = l1.congruence(&dag_is).symmetrize();
    let eye = Matrix::identity(k);
    let i_minus = eye.sub(&omega);
    let n2f = n2 as f64;
    let inv = 1.0 / n2f;
    let mut omega_dag = omega.scale(kappa * (kappa - inv));
    omega_dag.add_scaled(&i_minus, 1.0 - inv);
    let omega_dag = omega_dag.symmetrize();
    let eig = sym_eigen(&omega_dag)?;
    if eig.values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::SingularCovariance(format!("Ω† has a non-positive eigenvalue {:?}", eig.values)));
    }
    let n1 = kappa * n2f;
    let w = dag_is.matvec(delta);
    let ncp: Vec<f64> = (0..k)
        .map(|j| {
            let p: f64 = eig.vector(j).iter().zip(&w).map(|(a, b)| a * b).sum();
            n1 * p * p
        })
        .collect();
    let num = n2f * (sq_trace(&omega_dag) + trace(&omega_dag).powi(2));
    let den = kappa * kappa * (kappa - inv) * (sq_trace(&omega) + trace(&omega).powi(2))
        + (1.0 - inv) * (sq_trace(&i_minus) + trace(&i_minus).powi(2));
    let nu = num / den;
    if !(nu > (k - 1) as f64) || !nu.is_finite() {
        return Err(Error::SingularCovariance(format!("degrees of freedom ν = {nu} not above K − 1")));
    }
    Ok(NonNullSpec {
        delta: delta.to_vec(),
        lambda1: l1,
        lambda2: l2,
        kappa,
        n1,
        n2,
        lambda_dag: dag,
        lambda_dag_inv_sqrt: dag_is,
        omega,
        omega_dag,
        d: eig.values.clone(),
        u: Matrix::from_fn(k, k, |a, b| eig.vector(b)[a]),
        ncp,
        nu,
    })
}

/// Draws `i ∈ block b` use substream `(b, 0)` for normals and `(b, 1)` for
/// the χ² denominator, so the same normals are reused when only `ν`, `d` or
/// the noncentralities change.
fn block_variates(rng: &RngStream, b: usize, len: usize, weights: &[f64], shifts: &[f64], den_df: Option<(f64, f64)>) -> Vec<f64> {
    let mut zs = rng.substream2(b as u64, 0);
    let mut gs = rng.substream2(b as u64, 1);
    (0..len)
        .map(|_| {
            let num: f64 = weights
                .iter()
                .zip(shifts)
                .map(|(w, s)| {
                    let z = standard_normal(&mut zs) + s;
                    w * z * z
                })
                .sum();
            match den_df {
                Some((df, nu)) => num / (chisq_sample(&mut gs, df).expect("df checked") / nu),
                None => num,
            }
        })
        .collect()
}

fn variates(rng: &RngStream, m: usize, weights: &[f64], shifts: &[f64], den: Option<(f64, f64)>) -> Vec<f64> {
    (0..m.div_ceil(BLOCK))
        .into_par_iter()
        .flat_map_iter(|b| block_variates(rng, b, BLOCK.min(m - b * BLOCK), weights, shifts, den))
        .collect()
}

fn count_above(rng: &RngStream, m: usize, weights: &[f64], shifts: &[f64], den: Option<(f64, f64)>, thr: f64) -> u64 {
    (0..m.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            block_variates(rng, b, BLOCK.min(m - b * BLOCK), weights, shifts, den)
                .into_iter()
                .filter(|&v| v > thr)
                .count() as u64
        })
        .sum()
}

/// `m` draws of the non-null variate; distributed as `n₂(1+1/κ)T/(n−2)`.
pub fn sample_nonnull(rng: &RngStream, spec: &NonNullSpec, m: usize) -> Result<Vec<f64>> {
    let (w, s, den) = exact_parts(spec)?;
    Ok(variates(rng, m, &w, &s, Some(den)))
}

fn exact_parts(spec: &NonNullSpec) -> Result<(Vec<f64>, Vec<f64>, (f64, f64))> {
    let k = spec.k();
    let df = spec.nu - k as f64 + 1.0;
    if !(df > 0.0) {
        return Err(Error::SingularCovariance(format!("denominator df ν − K + 1 = {df}")));
    }
    let w = spec.d.iter().map(|d| 1.0 / d).collect();
    let s = spec.ncp.iter().map(|c| c.sqrt()).collect();
    Ok((w, s, (df, spec.nu)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerResult {
    pub power: f64,
    pub se: f64,
    pub draws: usize,
    pub k: usize,
    pub delta: Vec<f64>,
    pub threshold: f64,
    /// `None` in asymptotic mode.
    pub nu: Option<f64>,
    pub n1: usize,
    pub n2: usize,
}

fn check_draws(m: usize) -> Result<()> {
    if m < 1000 {
        return Err(invalid(format!("need at least 1000 power draws, got {m}")));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn binomial(count: u64, m: usize) -> (f64, f64) {
    let p = count as f64 / m as f64;
    (p, (p * (1.0 - p) / m as f64).sqrt())
}

pub fn power_from_spec(rng: &RngStream, spec: &NonNullSpec, alpha: f64, m: usize) -> Result<PowerResult> {
    check_alpha(alpha)?;
    check_draws(m)?;
    let thr = spec.threshold(alpha)?;
    let (w, s, den) = exact_parts(spec)?;
    let (power, se) = binomial(count_above(rng, m, &w, &s, Some(den), thr), m);
    Ok(PowerResult {
        power,
        se,
        draws: m,
        k: spec.k(),
        delta: spec.delta.clone(),
        threshold: thr,
        nu: Some(spec.nu),
        n1: spec.n1_int(),
        n2: spec.n2,
    })
}

/// Large-sample power. `delta` is the mean difference already scaled by
/// `√(κ n₂)`; the variate is `κ Σ d_k⁻¹ χ²₁((u_kᵀ Λ†^{-1/2} Δ)²)` with
/// `Ω† = I + (κ²−1) Ω`, against the χ²_K critical value.
pub fn asymptotic_power(
    rng: &RngStream,
    delta: &[f64],
    lambda1: &Matrix,
    lambda2: &Matrix,
    kappa: f64,
    alpha: f64,
    m: usize,
) -> Result<PowerResult> {
    check_alpha(alpha)?;
    check_draws(m)?;
    let k = delta.len();
    if k == 0 {
        return Err(invalid("Δ must have at least one component"));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(invalid(format!("allocation ratio must be positive, got {kappa}")));
    }
    check_square(lambda1, k, "Λ₁")?;
    check_square(lambda2, k, "Λ₂")?;
    let mut dag = lambda1.symmetrize();
    dag.add_scaled(&lambda2.symmetrize(), kappa);
    let dag_is = inv_sqrt_spd(&dag)?;
    let omega = lambda1.symmetrize().congruence(&dag_is).symmetrize();
    let mut omega_dag = Matrix::identity(k);
    omega_dag.add_scaled(&omega, kappa * kappa - 1.0);
    let eig = sym_eigen(&omega_dag.symmetrize())?;
    let w_delta = dag_is.matvec(delta);
    let weights: Vec<f64> = eig.values.iter().map(|d| kappa / d).collect();
    let shifts: Vec<f64> =
        (0..k).map(|j| eig.vector(j).iter().zip(&w_delta).map(|(a, b)| a * b).sum::<f64>().abs()).collect();
    let thr = chisq_quantile(1.0 - alpha, k as f64)?;
    let (power, se) = binomial(count_above(rng, m, &weights, &shifts, None, thr), m);
    Ok(PowerResult { power, se, draws: m, k, delta: delta.to_vec(), threshold: thr, nu: None, n1: 0, n2: 0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PowerMode {
    #[default]
    Exact,
    Asymptotic,
}

/// How `Λ₁`, `Λ₂` (and the eigensystem) are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSource {
    /// Known kernel eigensystem, Monte Carlo over designs.
    #[default]
    Mc,
    /// fPCA on a large synthetic dataset and empirical score covariances.
    SyntheticFpca,
}

fn default_pve() -> f64 {
    DEFAULT_PVE
}
fn default_grid() -> usize {
    DEFAULT_GRID
}
fn default_design_draws() -> usize {
    DEFAULT_DESIGN_DRAWS
}
fn default_synthetic_n() -> usize {
    10_000
}

/// Data-generating model shared by the power and sample-size calculations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub meandiff: MeanDiff,
    pub kernel: CovarianceKernel,
    pub design: SamplingDesign,
    pub tau2: f64,
    #[serde(default = "default_pve")]
    pub pve: f64,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default)]
    pub lambda_source: LambdaSource,
    #[serde(default = "default_design_draws")]
    pub design_draws: usize,
    /// Subjects per group in the synthetic-fpca path.
    #[serde(default = "default_synthetic_n")]
    pub synthetic_n: usize,
    /// Smoother bandwidths for the synthetic-fpca path.
    #[serde(default = "default_mean_bw")]
    pub fpca_mean_bandwidth: f64,
    #[serde(default = "default_cov_bw")]
    pub fpca_cov_bandwidth: f64,
}

fn default_mean_bw() -> f64 {
    FpcaOptions::default().mean_bandwidth
}
fn default_cov_bw() -> f64 {
    FpcaOptions::default().cov_bandwidth
}

impl ModelSpec {
    pub fn new(meandiff: MeanDiff, kernel: CovarianceKernel, design: SamplingDesign, tau2: f64) -> Self {
        ModelSpec {
            meandiff,
            kernel,
            design,
            tau2,
            pve: DEFAULT_PVE,
            grid_size: DEFAULT_GRID,
            lambda_source: LambdaSource::Mc,
            design_draws: DEFAULT_DESIGN_DRAWS,
            synthetic_n: default_synthetic_n(),
            fpca_mean_bandwidth: default_mean_bw(),
            fpca_cov_bandwidth: default_cov_bw(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.meandiff.validate()?;
        self.kernel.validate()?;
        self.design.validate()?;
        if !(self.tau2 >= 0.0 && self.tau2.is_finite()) {
            return Err(invalid(format!("tau2 must be nonnegative, got {}", self.tau2)));
        }
        if !(self.pve > 0.0 && self.pve <= 1.0) {
            return Err(invalid(format!("pve must lie in (0, 1], got {}", self.pve)));
        }
        if self.grid_size < 20 {
            return Err(invalid(format!("grid_size must be at least 20, got {}", self.grid_size)));
        }
        if self.design_draws < 1000 {
            return Err(invalid(format!("design_draws must be at least 1000, got {}", self.design_draws)));
        }
        if self.synthetic_n < 100 {
            return Err(invalid(format!("synthetic_n must be at least 100, got {}", self.synthetic_n)));
        }
        Ok(())
    }
}

/// Steps that do not depend on the sample size: eigensystem, `Δ`, `Λ₁`, `Λ₂`.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub eigen: EigenSystem,
    pub delta: Vec<f64>,
    pub lambda1: Matrix,
    pub lambda2: Matrix,
}

impl PreparedModel {
    pub fn k(&self) -> usize {
        self.delta.len()
    }

    pub fn spec(&self, kappa: f64, n2: usize) -> Result<NonNullSpec> {
        build_nonnull(&self.delta, &self.lambda1, &self.lambda2, kappa, n2)
    }

    pub fn power(
        &self,
        rng: &RngStream,
        kappa: f64,
        n2: usize,
        alpha: f64,
        draws: usize,
        mode: PowerMode,
    ) -> Result<PowerResult> {
        match mode {
            PowerMode::Exact => power_from_spec(rng, &self.spec(kappa, n2)?, alpha, draws),
            PowerMode::Asymptotic => {
                let scale = (kappa * n2 as f64).sqrt();
                let d: Vec<f64> = self.delta.iter().map(|x| x * scale).collect();
                let mut r = asymptotic_power(rng, &d, &self.lambda1, &self.lambda2, kappa, alpha, draws)?;
                r.n1 = group1_size(kappa, n2);
                r.n2 = n2;
                r.delta = self.delta.clone();
                Ok(r)
            }
        }
    }
}

/// Eigensystem, projected mean difference and score covariances.
pub fn prepare_model(rng: &RngStream, model: &ModelSpec) -> Result<PreparedModel> {
    model.validate()?;
    match model.lambda_source {
        LambdaSource::Mc => {
            let eigen = eigen_from_kernel(&model.kernel, model.grid_size, model.pve)?;
            let delta = eigen.project_meandiff(&model.meandiff);
            let m = design_moments(
                rng,
                &eigen,
                &model.design,
                &model.meandiff,
                model.tau2,
                model.design_draws,
                WorkingCovariance::ExactKernel,
            )?;
            debug!("design moments over {} draws, K = {}", m.draws, eigen.k());
            Ok(PreparedModel { lambda1: m.lambda1(), lambda2: m.lambda2(), eigen, delta })
        }
        LambdaSource::SyntheticFpca => {
            let n = model.synthetic_n;
            let data = generate_dataset(rng, n, n, &model.meandiff, &model.kernel, &model.design, model.tau2)?;
            let opts = FpcaOptions {
                grid_size: model.grid_size,
                pve: model.pve,
                mean_bandwidth: model.fpca_mean_bandwidth,
                cov_bandwidth: model.fpca_cov_bandwidth,
                ..FpcaOptions::default()
            };
            let fit = fpca_fit(&data, &opts)?;
            let delta = fit.eigen.project_meandiff(&model.meandiff);
            debug!("synthetic fPCA: K = {}, tau2 = {:.3e}", fit.k(), fit.tau2);
            Ok(PreparedModel { lambda1: fit.scores.lambda1, lambda2: fit.scores.lambda2, eigen: fit.eigen, delta })
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}
fn default_kappa() -> f64 {
    1.0
}
fn default_draws() -> usize {
    DEFAULT_POWER_DRAWS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerRequest {
    pub model: ModelSpec,
    pub n2: usize,
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
}

/// The model-preparation and power streams of a seed.
pub fn seed_streams(seed: u64) -> (RngStream, RngStream) {
    let root = RngStream::new(seed);
    (root.substream(0), root.substream(1))
}

pub fn algorithm1_power(req: &PowerRequest) -> Result<PowerResult> {
    let (prep_rng, power_rng) = seed_streams(req.seed);
    let prepared = prepare_model(&prep_rng, &req.model)?;
    prepared.power(&power_rng, req.kappa, req.n2, req.alpha, req.draws, req.mode)
}

fn default_n_max() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSizeRequest {
    pub model: ModelSpec,
    pub target: f64,
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
    /// Largest group-2 size tried before giving up.
    #[serde(default = "default_n_max")]
    pub n2_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSizeResult {
    pub n1: usize,
    pub n2: usize,
    pub total: usize,
    pub power: f64,
    /// Power one step below (`None` at the search floor).
    pub power_below: Option<f64>,
    pub k: usize,
    pub delta: Vec<f64>,
    /// Every evaluated `(n₂, power)`, ascending in `n₂`.
    pub curve: Vec<(usize, f64)>,
}

/// Minimal `n₂ ≥ 3` with `power(⌈κn₂⌉, n₂) > γ` for a prepared model.
pub fn search_samplesize(
    prepared: &PreparedModel,
    rng: &RngStream,
    target: f64,
    kappa: f64,
    alpha: f64,
    draws: usize,
    mode: PowerMode,
    n2_max: usize,
) -> Result<SampleSizeResult> {
    check_alpha(alpha)?;
    if !(target > alpha && target < 1.0) {
        return Err(invalid(format!("target power must lie in (alpha, 1) = ({alpha}, 1), got {target}")));
    }
    let k = prepared.k();
    let mut floor = 3usize;
    while group1_size(kappa, floor) + floor < k + 2 {
        floor += 1;
    }
    if n2_max < floor {
        return Err(invalid(format!("n2_max {n2_max} is below the search floor {floor}")));
    }
    let mut memo: BTreeMap<usize, f64> = BTreeMap::new();
    let mut eval = |n2: usize| -> Result<f64> {
        if let Some(&p) = memo.get(&n2) {
            return Ok(p);
        }
        let p = prepared.power(rng, kappa, n2, alpha, draws, mode)?.power;
        debug!("n2 = {n2}: power {p:.4}");
        memo.insert(n2, p);
        Ok(p)
    };
    let mut hi = floor;
    let mut lo = None;
    while eval(hi)? <= target {
        if hi == n2_max {
            return Err(Error::Unreachable { target, n_max: n2_max, best: eval(hi)? });
        }
        lo = Some(hi);
        hi = (hi * 2).min(n2_max);
    }
    if let Some(mut lo) = lo {
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if eval(mid)? > target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    // downward confirmation in case the Monte Carlo curve is not monotone
    while hi > floor && eval(hi - 1)? > target {
        hi -= 1;
    }
    let power = eval(hi)?;
    let power_below = if hi > floor { Some(eval(hi - 1)?) } else { None };
    let n1 = group1_size(kappa, hi);
    info!("minimum sample size n1 = {n1}, n2 = {hi} (power {power:.4})");
    Ok(SampleSizeResult {
        n1,
        n2: hi,
        total: n1 + hi,
        power,
        power_below,
        k,
        delta: prepared.delta.clone(),
        curve: memo.into_iter().collect(),
    })
}

pub fn algorithm2_samplesize(req: &SampleSizeRequest) -> Result<SampleSizeResult> {
    check_alpha(req.alpha)?;
    if !(req.target > req.alpha && req.target < 1.0) {
        return Err(invalid(format!("target power must lie in (alpha, 1), got {}", req.target)));
    }
    let (prep_rng, power_rng) = seed_streams(req.seed);
    let prepared = prepare_model(&prep_rng, &req.model)?;
    search_samplesize(&prepared, &power_rng, req.target, req.kappa, req.alpha, req.draws, req.mode, req.n2_max)
}
