//! Simplified sparse fPCA: local-linear mean, smoothed covariance surface from
//! residual cross-products, measurement-error variance, and eigensystem.
//!
//! Deterministic for fixed inputs; there is no internal randomness.

use rayon::prelude::*;

use crate::eigengrid::{midpoint_grid, EigenSystem};
use crate::error::{invalid, Error, Result};
use crate::linalg::{sym_eigen, Matrix};
use crate::process::{interp_linear, Group, SparseDataset};
use crate::shrinkage::{blup_scores_with, ShrinkageScoreSet, WorkingCovariance};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpcaOptions {
    pub grid_size: usize,
    pub pve: f64,
    pub mean_bandwidth: f64,
    pub cov_bandwidth: f64,
    /// Pair cells per axis used to bin cross-products before smoothing.
    pub bins: usize,
    /// Lower bound on the working τ², relative to the leading eigenvalue.
    pub tau2_floor: f64,
    /// Add the variance beyond the retained components to the working τ².
    pub truncation_nugget: bool,
}

impl Default for FpcaOptions {
    fn default() -> Self {
        FpcaOptions {
            grid_size: 50,
            pve: crate::eigengrid::DEFAULT_PVE,
            mean_bandwidth: 0.1,
            cov_bandwidth: 0.15,
            bins: 100,
            tau2_floor: 1e-4,
            truncation_nugget: false,
        }
    }
}

impl FpcaOptions {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 20 {
            return Err(invalid(format!("fPCA grid needs at least 20 points, got {}", self.grid_size)));
        }
        if !(self.mean_bandwidth > 0.0 && self.cov_bandwidth > 0.0) {
            return Err(invalid("bandwidths must be positive"));
        }
        if !(self.pve > 0.0 && self.pve <= 1.0) {
            return Err(invalid(format!("pve must lie in (0, 1], got {}", self.pve)));
        }
        if self.bins < 10 {
            return Err(invalid("need at least 10 bins"));
        }
        if !(self.tau2_floor >= 0.0) {
            return Err(invalid("tau2 floor must be nonnegative"));
        }
        Ok(())
    }
}

fn epanechnikov(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Local-linear Epanechnikov smoother of `(t, y)` pairs evaluated on `grid`.
/// Falls back to the local average where the local design is degenerate.
pub fn estimate_mean(times: &[f64], values: &[f64], grid: &[f64], bandwidth: f64) -> Result<Vec<f64>> {
    if times.is_empty() || times.len() != values.len() {
        return Err(invalid("mean estimation needs nonempty, matched times and values"));
    }
    if !(bandwidth > 0.0) {
        return Err(invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let ts: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    grid.iter()
        .map(|&g| {
            let lo = ts.partition_point(|&t| t <= g - bandwidth);
            let hi = ts.partition_point(|&t| t < g + bandwidth);
            let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in lo..hi {
                let d = ts[i] - g;
                let w = epanechnikov(d / bandwidth);
                s0 += w;
                s1 += w * d;
                s2 += w * d * d;
                t0 += w * ys[i];
                t1 += w * d * ys[i];
            }
            if s0 <= 0.0 {
                return Err(Error::InsufficientData(format!("no observations within {bandwidth} of t = {g:.3}")));
            }
            let det = s0 * s2 - s1 * s1;
            if det > 1e-10 * s0 * s2 {
                Ok((s2 * t0 - s1 * t1) / det)
            } else {
                Ok(t0 / s0)
            }
        })
        .collect()
}

/// Smoothed covariance surface on `grid` with the measurement-error variance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub surface: Matrix,
    pub tau2: f64,
}

/// Residuals in subject order, paired with their times.
struct Residuals {
    subjects: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Covariance from residual cross-products `r_ij r_ij′`, `j ≠ j′`: binned on a
/// `bins × bins` lattice, then smoothed by a 2-D local-linear fit with product
/// Epanechnikov weights. The estimate is symmetrized and projected onto the
/// PSD cone. `τ̂²` is the mean of `r² − Σ̂(t, t)`, clipped at 0.
fn estimate_covariance_from(res: &Residuals, grid: &[f64], bandwidth: f64, bins: usize) -> Result<CovarianceEstimate> {
    let nb = bins;
    let width = 1.0 / nb as f64;
    let cell = |t: f64| ((t / width) as usize).min(nb - 1);
    let mut count = vec![0.0; nb * nb];
    let mut sum = vec![0.0; nb * nb];
    let mut pairs = 0usize;
    for (t, r) in &res.subjects {
        for a in 0..t.len() {
            for b in 0..t.len() {
                if a == b {
                    continue;
                }
                let idx = cell(t[a]) * nb + cell(t[b]);
                count[idx] += 1.0;
                sum[idx] += r[a] * r[b];
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::InsufficientData("no subject has two or more observations".into()));
    }
    let centers: Vec<f64> = (0..nb).map(|i| (i as f64 + 0.5) * width).collect();
    let r = grid.len();
    // w[g][i] = K((c_i − grid_g)/h), d = c_i − grid_g
    let weights: Vec<Vec<(usize, f64, f64)>> = grid
        .iter()
        .map(|&g| {
            centers
                .iter()
                .enumerate()
                .filter_map(|(i, &c)| {
                    let d = c - g;
                    let w = epanechnikov(d / bandwidth);
                    (w > 0.0).then_some((i, w, d))
                })
                .collect()
        })
        .collect();
    // First pass over the second axis: for every bin row i and output column b,
    // moments Σ_j w_b(j) d^p C[i, j] for p = 0, 1, 2 and the same with sums.
    let partial: Vec<[f64; 5]> = (0..nb * r)
        .into_par_iter()
        .map(|ib| {
            let (i, b) = (ib / r, ib % r);
            let mut m = [0.0; 5];
            for &(j, w, d) in &weights[b] {
                let c = count[i * nb + j];
                if c == 0.0 {
                    continue;
                }
                let s = sum[i * nb + j];
                m[0] += w * c;
                m[1] += w * d * c;
                m[2] += w * d * d * c;
                m[3] += w * s;
                m[4] += w * d * s;
            }
            m
        })
        .collect();
    let surface_vals: Vec<f64> = (0..r * r)
        .into_par_iter()
        .map(|ab| {
            let (a, b) = (ab / r, ab % r);
            // moments: s00 s10 s01 s20 s11 s02, y0 y1x y1y
            let (mut s00, mut s10, mut s01, mut s20, mut s11, mut s02) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            let (mut y0, mut yx, mut yy) = (0.0, 0.0, 0.0);
            for &(i, w, d) in &weights[a] {
                let m = &partial[i * r + b];
                s00 += w * m[0];
                s01 += w * m[1];
                s02 += w * m[2];
                s10 += w * d * m[0];
                s11 += w * d * m[1];
                s20 += w * d * d * m[0];
                y0 += w * m[3];
                yy += w * m[4];
                yx += w * d * m[3];
            }
            if s00 <= 0.0 {
                return f64::NAN;
            }
            let mat = Matrix::from_rows(&[vec![s00, s10, s01], vec![s10, s20, s11], vec![s01, s11, s02]])
                .expect("3x3");
            match crate::linalg::spd_solve_vec(&mat, &[y0, yx, yy]) {
                Ok(beta) if beta[0].is_finite() && cond_ok(&mat) => beta[0],
                _ => y0 / s00,
            }
        })
        .collect();
    if surface_vals.iter().any(|v| v.is_nan()) {
        return Err(Error::InsufficientData(format!(
            "covariance bandwidth {bandwidth} leaves grid cells without pairs"
        )));
    }
    let raw = Matrix::from_vec(r, r, surface_vals)?.symmetrize();
    let surface = psd_project(&raw)?;
    let mut excess = 0.0;
    let mut points = 0usize;
    let diag: Vec<f64> = (0..r).map(|i| surface[(i, i)]).collect();
    for (t, res) in &res.subjects {
        for (&tj, &rj) in t.iter().zip(res) {
            excess += rj * rj - interp_linear(grid, &diag, tj);
            points += 1;
        }
    }
    let tau2 = (excess / points as f64).max(0.0);
    Ok(CovarianceEstimate { surface, tau2 })
}

fn cond_ok(m: &Matrix) -> bool {
    // reject nearly singular local designs (e.g. all pairs on one line)
    let s = m[(0, 0)];
    let det = m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(1, 2)];
    det > 1e-10 * m[(1, 1)] * m[(2, 2)] && s > 0.0
}

/// Projects a symmetric matrix onto the PSD cone by clipping eigenvalues.
pub fn psd_project(a: &Matrix) -> Result<Matrix> {
    let eig = sym_eigen(a)?;
    Ok(eig.map_values(|v| v.max(0.0)).symmetrize())
}

/// Covariance surface and `τ̂²` given a fitted mean on `grid`.
pub fn estimate_covariance(
    data: &SparseDataset,
    mean_on_grid: &[f64],
    grid: &[f64],
    bandwidth: f64,
) -> Result<CovarianceEstimate> {
    if !(bandwidth > 0.0) {
        return Err(invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let subjects = data
        .subjects
        .iter()
        .map(|s| {
            let r = s.times.iter().zip(&s.values).map(|(&t, &y)| y - interp_linear(grid, mean_on_grid, t)).collect();
            (s.times.clone(), r)
        })
        .collect();
    estimate_covariance_from(&Residuals { subjects }, grid, bandwidth, FpcaOptions::default().bins)
}

/// Result of the sparse fPCA fit with per-subject shrinkage scores.
#[derive(Debug, Clone)]
pub struct FpcaFit {
    pub grid: Vec<f64>,
    pub pooled_mean: Vec<f64>,
    pub group_means: [Vec<f64>; 2],
    pub covariance: Matrix,
    pub tau2: f64,
    /// `τ̂²` after flooring, used in the working covariance.
    pub working_tau2: f64,
    pub eigen: EigenSystem,
    pub scores: ShrinkageScoreSet,
}

impl FpcaFit {
    pub fn k(&self) -> usize {
        self.eigen.k()
    }

    /// Estimated mean difference `μ̂₂ − μ̂₁` on the grid.
    pub fn effect_curve(&self) -> Vec<f64> {
        self.group_means[1].iter().zip(&self.group_means[0]).map(|(b, a)| b - a).collect()
    }
}

fn pooled_points(data: &SparseDataset, group: Option<Group>) -> (Vec<f64>, Vec<f64>) {
    let mut t = Vec::new();
    let mut y = Vec::new();
    for s in data.subjects.iter().filter(|s| group.map_or(true, |g| s.group == g)) {
        t.extend_from_slice(&s.times);
        y.extend_from_slice(&s.values);
    }
    (t, y)
}

/// Full fit: pooled and group means, covariance from group-centred residuals,
/// eigensystem by PVE, and shrinkage scores against the pooled mean.
pub fn fpca_fit(data: &SparseDataset, opts: &FpcaOptions) -> Result<FpcaFit> {
    opts.validate()?;
    data.validate()?;
    let grid = midpoint_grid(opts.grid_size);
    let (t, y) = pooled_points(data, None);
    let pooled_mean = estimate_mean(&t, &y, &grid, opts.mean_bandwidth)?;
    let mut group_means = [Vec::new(), Vec::new()];
    for (slot, g) in group_means.iter_mut().zip([Group::One, Group::Two]) {
        let (t, y) = pooled_points(data, Some(g));
        *slot = estimate_mean(&t, &y, &grid, opts.mean_bandwidth)?;
    }
    let subjects = data
        .subjects
        .iter()
        .map(|s| {
            let m = &group_means[(s.group.label() - 1) as usize];
            let r = s.times.iter().zip(&s.values).map(|(&t, &y)| y - interp_linear(&grid, m, t)).collect();
            (s.times.clone(), r)
        })
        .collect();
    let est = estimate_covariance_from(&Residuals { subjects }, &grid, opts.cov_bandwidth, opts.bins)?;
    let eig = sym_eigen(&est.surface)?;
    let eigen = EigenSystem::from_decomposition(grid.clone(), &eig, opts.pve)?;
    let nugget = if opts.truncation_nugget { eigen.residual_variance } else { 0.0 };
    let working_tau2 = (est.tau2 + nugget).max(opts.tau2_floor * eigen.values[0]);
    let mu = |t: f64| interp_linear(&grid, &pooled_mean, t);
    let scored: Vec<(Group, Vec<f64>)> = data
        .subjects
        .par_iter()
        .map(|s| {
            blup_scores_with(&s.times, &s.values, &eigen, working_tau2, &mu, WorkingCovariance::Truncated)
                .map(|z| (s.group, z))
        })
        .collect::<Result<_>>()?;
    let mut g1 = Vec::new();
    let mut g2 = Vec::new();
    for (g, z) in scored {
        match g {
            Group::One => g1.push(z),
            Group::Two => g2.push(z),
        }
    }
    let scores = ShrinkageScoreSet::new(g1, g2)?;
    Ok(FpcaFit {
        grid,
        pooled_mean,
        group_means,
        covariance: est.surface,
        tau2: est.tau2,
        working_tau2,
        eigen,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_reproduces_lines() {
        let t: Vec<f64> = (0..400).map(|i| (i as f64 * 0.618_034) % 1.0).collect();
        let grid = midpoint_grid(30);
        let c = estimate_mean(&t, &vec![2.5; t.len()], &grid, 0.1).unwrap();
        assert!(c.iter().all(|v| (v - 2.5).abs() < 1e-10));
        let y: Vec<f64> = t.iter().map(|&s| 1.0 - 3.0 * s).collect();
        let l = estimate_mean(&t, &y, &grid, 0.1).unwrap();
        for (g, v) in grid.iter().zip(&l) {
            assert!((v - (1.0 - 3.0 * g)).abs() < 1e-8);
        }
    }

    #[test]
    fn mean_rejects_bad_input() {
        assert!(estimate_mean(&[], &[], &[0.5], 0.1).is_err());
        assert!(estimate_mean(&[0.5], &[1.0], &[0.5], 0.0).is_err());
    }

    #[test]
    fn psd_projection_clips() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let p = psd_project(&a).unwrap();
        let e = sym_eigen(&p).unwrap();
        assert!(e.values[1] >= 0.0);
        assert!((e.values[0] - 3.0).abs() < 1e-12);
        // only the −1 eigenvalue moves
        assert!((p.sub(&a).frobenius_norm() - 1.0).abs() < 1e-12);
    }
}
