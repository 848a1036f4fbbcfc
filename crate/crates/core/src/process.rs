//! Mean-difference functions, covariance kernels, sampling designs, and the
//! generator for sparse two-group datasets.
//!
//! Group 1 has mean zero and group 2 has mean `η(t)`. Latent trajectories are
//! drawn jointly normal at each subject's observed times (exact, no
//! truncation), except for the rank-two kernel where the two-term expansion is
//! itself exact and is used directly.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{chol_spd, sym_eigen, Matrix};
use crate::probdist::{psd_factor, standard_normal, RngStream};

const DOMAIN_SLACK: f64 = 1e-12;

fn check_time(t: f64) -> Result<()> {
    if (-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(t))
    }
}

/// Mean difference `η(t) = μ₂(t) − μ₁(t)` in response units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanDiff {
    Zero,
    /// `c₀ + c₁ t + c₂ t² + …`
    Polynomial { coefficients: Vec<f64> },
    /// Linear interpolation between `(knots[i], values[i])`, constant outside.
    PiecewiseLinear { knots: Vec<f64>, values: Vec<f64> },
}

impl MeanDiff {
    /// `η t³`
    pub fn cubic(eta: f64) -> Self {
        MeanDiff::Polynomial { coefficients: vec![0.0, 0.0, 0.0, eta] }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            MeanDiff::Zero => 0.0,
            MeanDiff::Polynomial { coefficients } => coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c),
            MeanDiff::PiecewiseLinear { knots, values } => interp_linear(knots, values, t),
        }
    }

    pub fn scaled(&self, factor: f64) -> MeanDiff {
        match self {
            MeanDiff::Zero => MeanDiff::Zero,
            MeanDiff::Polynomial { coefficients } => {
                MeanDiff::Polynomial { coefficients: coefficients.iter().map(|c| c * factor).collect() }
            }
            MeanDiff::PiecewiseLinear { knots, values } => MeanDiff::PiecewiseLinear {
                knots: knots.clone(),
                values: values.iter().map(|v| v * factor).collect(),
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            MeanDiff::Zero => true,
            MeanDiff::Polynomial { coefficients } => coefficients.iter().all(|&c| c == 0.0),
            MeanDiff::PiecewiseLinear { values, .. } => values.iter().all(|&v| v == 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MeanDiff::Zero => Ok(()),
            MeanDiff::Polynomial { coefficients } => {
                if coefficients.iter().all(|c| c.is_finite()) {
                    Ok(())
                } else {
                    Err(invalid("polynomial coefficients must be finite"))
                }
            }
            MeanDiff::PiecewiseLinear { knots, values } => {
                if knots.is_empty() || knots.len() != values.len() {
                    return Err(invalid("piecewise-linear mean needs equal, nonempty knots and values"));
                }
                if knots.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("piecewise-linear knots must be strictly increasing"));
                }
                if knots.iter().chain(values).any(|x| !x.is_finite()) {
                    return Err(invalid("piecewise-linear mean must be finite"));
                }
                Ok(())
            }
        }
    }
}

/// Linear interpolation on ascending `xs`, clamped to the end values.
pub fn interp_linear(xs: &[f64], ys: &[f64], t: f64) -> f64 {
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    if t <= xs[0] {
        return ys[0];
    }
    if t >= xs[n - 1] {
        return ys[n - 1];
    }
    let hi = xs.partition_point(|&x| x <= t).min(n - 1);
    let lo = hi - 1;
    let w = (t - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + w * (ys[hi] - ys[lo])
}

pub const RANK2_VARIANCES: [f64; 2] = [1.0, 0.5];

/// `(√2 sin 2πt, √2 cos 2πt)`
pub fn rank2_basis(t: f64) -> [f64; 2] {
    let a = 2.0 * PI * t;
    [SQRT_2 * a.sin(), SQRT_2 * a.cos()]
}

/// Covariance kernel of the latent process on `[0, 1]²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceKernel {
    /// `σ² {ρ + (1 − ρ) 1[t = t′]}`
    CompoundSymmetry { variance: f64, rho: f64 },
    /// `σ² base^|t − t′|`
    Car1 { variance: f64, base: f64 },
    /// Covariance of `ξ₁ √2 sin 2πt + ξ₂ √2 cos 2πt` with `Var ξ = (1, 0.5)`.
    NonStationaryRank2,
    /// Tabulated kernel, bilinear between grid points.
    Grid { grid: Vec<f64>, values: Vec<Vec<f64>> },
}

impl CovarianceKernel {
    pub fn validate(&self) -> Result<()> {
        match self {
            CovarianceKernel::CompoundSymmetry { variance, rho } => {
                if !(*variance > 0.0 && variance.is_finite()) {
                    return Err(invalid(format!("CS variance must be positive, got {variance}")));
                }
                if !(0.0..=1.0).contains(rho) {
                    return Err(invalid(format!("CS correlation must lie in [0, 1], got {rho}")));
                }
            }
            CovarianceKernel::Car1 { variance, base } => {
                if !(*variance > 0.0 && variance.is_finite()) {
                    return Err(invalid(format!("CAR(1) variance must be positive, got {variance}")));
                }
                if !(*base > 0.0 && *base < 1.0) {
                    return Err(invalid(format!("CAR(1) base must lie in (0, 1), got {base}")));
                }
            }
            CovarianceKernel::NonStationaryRank2 => {}
            CovarianceKernel::Grid { grid, values } => {
                if grid.len() < 2 || values.len() != grid.len() || values.iter().any(|r| r.len() != grid.len()) {
                    return Err(invalid("grid kernel needs an R-point grid and an RxR value table"));
                }
                if grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|&t| check_time(t).is_err()) {
                    return Err(invalid("grid kernel points must be strictly increasing inside [0, 1]"));
                }
                let m = Matrix::from_rows(values)?;
                if !m.is_finite() {
                    return Err(invalid("grid kernel has non-finite values"));
                }
                if m.max_asymmetry() > 1e-10 * m.max_abs().max(1.0) {
                    return Err(invalid("grid kernel is not symmetric"));
                }
                check_psd_matrix(&m.symmetrize())?;
            }
        }
        Ok(())
    }

    /// Kernel value with domain checking.
    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        check_time(t)?;
        check_time(s)?;
        Ok(self.value(t, s))
    }

    /// Kernel value without domain checking.
    pub fn value(&self, t: f64, s: f64) -> f64 {
        match self {
            CovarianceKernel::CompoundSymmetry { variance, rho } => {
                if t == s {
                    *variance
                } else {
                    variance * rho
                }
            }
            CovarianceKernel::Car1 { variance, base } => variance * base.powf((t - s).abs()),
            CovarianceKernel::NonStationaryRank2 => {
                let a = rank2_basis(t);
                let b = rank2_basis(s);
                RANK2_VARIANCES[0] * a[0] * b[0] + RANK2_VARIANCES[1] * a[1] * b[1]
            }
            CovarianceKernel::Grid { grid, values } => bilinear(grid, values, t, s),
        }
    }

    /// `{Σ(tᵢ, tⱼ)}` for a set of times.
    pub fn matrix_at(&self, times: &[f64]) -> Matrix {
        let n = times.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.value(times[i], times[j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Kernel evaluated between two time sets (rows `a`, columns `b`).
    pub fn cross_matrix(&self, a: &[f64], b: &[f64]) -> Matrix {
        Matrix::from_fn(a.len(), b.len(), |i, j| self.value(a[i], b[j]))
    }

    /// PSD check on a finite time set: min eigenvalue ≥ −1e-8·max.
    pub fn check_psd_at(&self, times: &[f64]) -> Result<()> {
        check_psd_matrix(&self.matrix_at(times))
    }
}

fn check_psd_matrix(m: &Matrix) -> Result<()> {
    let eig = sym_eigen(m)?;
    let max = eig.values.first().copied().unwrap_or(0.0);
    let min = eig.values.last().copied().unwrap_or(0.0);
    if min < -1e-8 * max.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd { min, max });
    }
    Ok(())
}

fn bilinear(grid: &[f64], values: &[Vec<f64>], t: f64, s: f64) -> f64 {
    let locate = |x: f64| -> (usize, f64) {
        let n = grid.len();
        if x <= grid[0] {
            return (0, 0.0);
        }
        if x >= grid[n - 1] {
            return (n - 2, 1.0);
        }
        let hi = grid.partition_point(|&g| g <= x).min(n - 1);
        let lo = hi - 1;
        (lo, (x - grid[lo]) / (grid[hi] - grid[lo]))
    };
    let (i, wt) = locate(t);
    let (j, ws) = locate(s);
    let v00 = values[i][j];
    let v01 = values[i][j + 1];
    let v10 = values[i + 1][j];
    let v11 = values[i + 1][j + 1];
    (1.0 - wt) * ((1.0 - ws) * v00 + ws * v01) + wt * ((1.0 - ws) * v10 + ws * v11)
}

/// Number of scheduled observations per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CountRule {
    Fixed(usize),
    /// Uniform over the integers `min..=max`.
    Uniform { min: usize, max: usize },
}

impl CountRule {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            CountRule::Fixed(m) => m,
            CountRule::Uniform { min, max } => rng.gen_range(min..=max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeRule {
    /// i.i.d. uniform on `[0, 1]`, sorted.
    Uniform,
    /// Fixed visit schedule in user units, mapped affinely onto `[0, 1]`.
    Schedule(Vec<f64>),
}

fn default_floor() -> usize {
    1
}

/// How observation times are generated for one subject.
///
/// With a fixed schedule the count rule is ignored; the schedule length is the
/// number of planned visits. Missingness thins planned points independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingDesign {
    pub count: CountRule,
    pub times: TimeRule,
    #[serde(default)]
    pub missing: f64,
    #[serde(default = "default_floor")]
    pub min_observations: usize,
}

impl SamplingDesign {
    pub fn uniform_fixed(m: usize) -> Self {
        SamplingDesign { count: CountRule::Fixed(m), times: TimeRule::Uniform, missing: 0.0, min_observations: 1 }
    }

    pub fn uniform_range(min: usize, max: usize) -> Self {
        SamplingDesign {
            count: CountRule::Uniform { min, max },
            times: TimeRule::Uniform,
            missing: 0.0,
            min_observations: 1,
        }
    }

    pub fn schedule(visits: Vec<f64>) -> Self {
        let m = visits.len();
        SamplingDesign { count: CountRule::Fixed(m), times: TimeRule::Schedule(visits), missing: 0.0, min_observations: 1 }
    }

    pub fn with_missing(mut self, p: f64) -> Self {
        self.missing = p;
        self
    }

    /// True when every subject gets the same times (no randomness in the design).
    pub fn is_deterministic(&self) -> bool {
        matches!(self.times, TimeRule::Schedule(_)) && self.missing == 0.0
    }

    pub fn max_planned(&self) -> usize {
        match (&self.times, &self.count) {
            (TimeRule::Schedule(v), _) => v.len(),
            (TimeRule::Uniform, CountRule::Fixed(m)) => *m,
            (TimeRule::Uniform, CountRule::Uniform { max, .. }) => *max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.missing) {
            return Err(invalid(format!("missing probability must lie in [0, 1), got {}", self.missing)));
        }
        if self.min_observations == 0 {
            return Err(invalid("min_observations must be at least 1"));
        }
        match &self.times {
            TimeRule::Uniform => match self.count {
                CountRule::Fixed(0) => return Err(invalid("fixed count must be at least 1")),
                CountRule::Uniform { min, max } if min == 0 || max < min => {
                    return Err(invalid(format!("count range {min}..={max} is empty or includes 0")))
                }
                _ => {}
            },
            TimeRule::Schedule(v) => {
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return Err(invalid("visit schedule must be nonempty and finite"));
                }
                if v.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("visit schedule must be strictly increasing"));
                }
            }
        }
        let smallest = match (&self.times, &self.count) {
            (TimeRule::Schedule(v), _) => v.len(),
            (TimeRule::Uniform, CountRule::Fixed(m)) => *m,
            (TimeRule::Uniform, CountRule::Uniform { min, .. }) => *min,
        };
        if self.min_observations > smallest {
            return Err(invalid(format!(
                "min_observations {} exceeds the smallest planned count {smallest}",
                self.min_observations
            )));
        }
        Ok(())
    }

    fn planned_times<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.times {
            TimeRule::Uniform => {
                let m = self.count.draw(rng);
                let mut t: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
                t.sort_by(f64::total_cmp);
                t
            }
            TimeRule::Schedule(v) => rescale_schedule(v),
        }
    }

    /// One subject's observation times after missingness, ascending.
    pub fn draw_times<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let planned = self.planned_times(rng);
        thin(rng, &planned, self.missing, self.min_observations)
    }
}

/// Affine map of a visit schedule onto `[0, 1]`.
pub fn rescale_schedule(visits: &[f64]) -> Vec<f64> {
    let lo = visits.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = visits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        visits.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; visits.len()]
    }
}

fn thin<R: Rng + ?Sized>(rng: &mut R, schedule: &[f64], p: f64, floor: usize) -> Vec<f64> {
    if p == 0.0 {
        return schedule.to_vec();
    }
    let floor = floor.min(schedule.len());
    loop {
        let kept: Vec<f64> = schedule.iter().copied().filter(|_| rng.gen::<f64>() >= p).collect();
        if kept.len() >= floor {
            return kept;
        }
    }
}

/// Keeps each scheduled point independently with probability `1 − p`,
/// redrawing until at least one point survives.
pub fn apply_missingness<R: Rng + ?Sized>(rng: &mut R, schedule: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(invalid(format!("missing probability must lie in [0, 1), got {p}")));
    }
    if schedule.is_empty() {
        return Err(invalid("cannot thin an empty schedule"));
    }
    Ok(thin(rng, schedule, p, 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    One,
    Two,
}

impl Group {
    pub fn label(self) -> u8 {
        match self {
            Group::One => 1,
            Group::Two => 2,
        }
    }

    pub fn from_label(label: u8) -> Option<Group> {
        match label {
            1 => Some(Group::One),
            2 => Some(Group::Two),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub group: Group,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Sparse irregular observations for two groups.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    pub subjects: Vec<Subject>,
    /// Measurement-error variance used to generate the data (`NaN` when unknown).
    pub tau2: f64,
}

impl SparseDataset {
    pub fn group_size(&self, g: Group) -> usize {
        self.subjects.iter().filter(|s| s.group == g).count()
    }

    pub fn total_points(&self) -> usize {
        self.subjects.iter().map(|s| s.times.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.subjects {
            if s.times.len() != s.values.len() {
                return Err(invalid(format!("subject {} has mismatched times/values", s.id)));
            }
            if s.times.is_empty() {
                return Err(invalid(format!("subject {} has no observations", s.id)));
            }
        }
        if self.group_size(Group::One) == 0 || self.group_size(Group::Two) == 0 {
            return Err(invalid("both groups must be nonempty"));
        }
        Ok(())
    }
}

/// Simulates `n1` group-1 and `n2` group-2 subjects. Subject `i` (group 1
/// first) draws from `rng.substream(i)`, so the output does not depend on
/// thread count.
pub fn generate_dataset(
    rng: &RngStream,
    n1: usize,
    n2: usize,
    meandiff: &MeanDiff,
    kernel: &CovarianceKernel,
    design: &SamplingDesign,
    tau2: f64,
) -> Result<SparseDataset> {
    if n1 == 0 || n2 == 0 {
        return Err(invalid("group sizes must be at least 1"));
    }
    if !(tau2 >= 0.0 && tau2.is_finite()) {
        return Err(invalid(format!("measurement-error variance must be nonnegative, got {tau2}")));
    }
    meandiff.validate()?;
    kernel.validate()?;
    design.validate()?;
    let subjects = (0..n1 + n2)
        .into_par_iter()
        .map(|i| {
            let group = if i < n1 { Group::One } else { Group::Two };
            let mut r = rng.substream(i as u64);
            simulate_subject(&mut r, format!("s{}", i + 1), group, meandiff, kernel, design, tau2)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SparseDataset { subjects, tau2 })
}

pub(crate) fn simulate_subject<R: Rng + ?Sized>(
    rng: &mut R,
    id: String,
    group: Group,
    meandiff: &MeanDiff,
    kernel: &CovarianceKernel,
    design: &SamplingDesign,
    tau2: f64,
) -> Result<Subject> {
    let times = design.draw_times(rng);
    let mut values = latent_values(rng, kernel, &times)?;
    let sd = tau2.sqrt();
    for (v, &t) in values.iter_mut().zip(&times) {
        if group == Group::Two {
            *v += meandiff.eval(t);
        }
        if sd > 0.0 {
            *v += sd * standard_normal(rng);
        }
    }
    Ok(Subject { id, group, times, values })
}

/// Zero-mean latent values at `times`, jointly normal with the kernel's covariance.
pub fn latent_values<R: Rng + ?Sized>(rng: &mut R, kernel: &CovarianceKernel, times: &[f64]) -> Result<Vec<f64>> {
    if let CovarianceKernel::NonStationaryRank2 = kernel {
        let xi = [
            RANK2_VARIANCES[0].sqrt() * standard_normal(rng),
            RANK2_VARIANCES[1].sqrt() * standard_normal(rng),
        ];
        return Ok(times
            .iter()
            .map(|&t| {
                let b = rank2_basis(t);
                xi[0] * b[0] + xi[1] * b[1]
            })
            .collect());
    }
    let cov = kernel.matrix_at(times);
    let factor = match chol_spd(&cov) {
        Ok(l) => l,
        Err(_) => psd_factor(&cov).map_err(|_| {
            let eig = sym_eigen(&cov).ok();
            let (min, max) = eig
                .map(|e| (*e.values.last().unwrap_or(&0.0), *e.values.first().unwrap_or(&0.0)))
                .unwrap_or((f64::NAN, f64::NAN));
            Error::NotPsd { min, max }
        })?,
    };
    let z: Vec<f64> = (0..times.len()).map(|_| standard_normal(rng)).collect();
    Ok(factor.matvec(&z))
}
