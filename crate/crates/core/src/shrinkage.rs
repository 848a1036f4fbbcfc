//! Shrinkage (BLUP) scores and their population covariance.

use rayon::prelude::*;

use crate::eigengrid::EigenSystem;
use crate::error::{invalid, Error, Result};
use crate::linalg::{chol_solve_vec, chol_spd, Matrix};
use crate::probdist::RngStream;
use crate::process::{MeanDiff, SamplingDesign};

pub const DEFAULT_DESIGN_DRAWS: usize = 10_000;

/// Which covariance plays the role of `G` in the score formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkingCovariance {
    /// `Σ(T_j, T_j′) + τ²` from the known kernel.
    ExactKernel,
    /// `Σ_k λ_k ψ_k(T_j) ψ_k(T_j′) + τ²` from the truncated eigensystem.
    Truncated,
}

impl WorkingCovariance {
    /// Exact when the eigensystem carries its kernel, truncated otherwise.
    pub fn for_system(eig: &EigenSystem) -> Self {
        if eig.kernel.is_some() {
            WorkingCovariance::ExactKernel
        } else {
            WorkingCovariance::Truncated
        }
    }
}

/// Per-subject pieces of the score map at fixed times: `Ψ` and
/// `A = G⁻¹ Ψ diag(λ)`, so that `ζ̃ = Aᵀ (Y − μ₀)`.
pub(crate) struct ScoreMap {
    psi_lambda: Matrix,
    a: Matrix,
}

impl ScoreMap {
    pub(crate) fn new(eig: &EigenSystem, times: &[f64], tau2: f64, working: WorkingCovariance) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InsufficientData("subject has no observations".into()));
        }
        let psi = eig.eval_at(times);
        let mut g = match (working, &eig.kernel) {
            (WorkingCovariance::ExactKernel, Some(kernel)) => kernel.matrix_at(times),
            (WorkingCovariance::ExactKernel, None) => {
                return Err(invalid("exact working covariance needs a known kernel"))
            }
            (WorkingCovariance::Truncated, _) => eig.truncated_cov(times),
        };
        for j in 0..times.len() {
            g[(j, j)] += tau2;
        }
        let l = chol_spd(&g).map_err(|e| Error::SingularCovariance(format!("working covariance G: {e}")))?;
        let k = eig.k();
        let psi_lambda = Matrix::from_fn(times.len(), k, |j, c| psi[(j, c)] * eig.values[c]);
        let mut a = Matrix::zeros(times.len(), k);
        for c in 0..k {
            let col = chol_solve_vec(&l, &psi_lambda.column(c));
            for (j, v) in col.into_iter().enumerate() {
                a[(j, c)] = v;
            }
        }
        Ok(ScoreMap { psi_lambda, a })
    }

    /// `Aᵀ v`
    pub(crate) fn apply(&self, v: &[f64]) -> Vec<f64> {
        let k = self.a.cols();
        (0..k).map(|c| (0..v.len()).map(|j| self.a[(j, c)] * v[j]).sum()).collect()
    }

    /// `diag(λ) Ψᵀ G⁻¹ Ψ diag(λ)`
    pub(crate) fn score_cov(&self) -> Matrix {
        self.psi_lambda.transpose().matmul(&self.a).symmetrize()
    }
}

/// `ζ̃ = diag(λ) Ψᵀ G⁻¹ (Y − μ₀(T))` with the default working covariance.
pub fn blup_scores(
    times: &[f64],
    values: &[f64],
    eig: &EigenSystem,
    tau2: f64,
    mu0: &dyn Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    blup_scores_with(times, values, eig, tau2, mu0, WorkingCovariance::for_system(eig))
}

pub fn blup_scores_with(
    times: &[f64],
    values: &[f64],
    eig: &EigenSystem,
    tau2: f64,
    mu0: &dyn Fn(f64) -> f64,
    working: WorkingCovariance,
) -> Result<Vec<f64>> {
    if times.len() != values.len() {
        return Err(invalid("times and values differ in length"));
    }
    let map = ScoreMap::new(eig, times, tau2, working)?;
    let centered: Vec<f64> = times.iter().zip(values).map(|(&t, &y)| y - mu0(t)).collect();
    Ok(map.apply(&centered))
}

/// Design moments behind the score covariance: the average of
/// `diag(λ)ΨᵀG⁻¹Ψdiag(λ)` over design draws and the covariance over draws of
/// the mean-shift term `diag(λ)ΨᵀG⁻¹η(T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMoments {
    pub within: Matrix,
    pub shift_cov: Matrix,
    pub shift_mean: Vec<f64>,
    pub draws: usize,
}

impl DesignMoments {
    /// `Λ₁` (no mean shift).
    pub fn lambda1(&self) -> Matrix {
        self.within.clone()
    }

    /// `Λ₂ = E_T[…] + Cov_T[…]`.
    pub fn lambda2(&self) -> Matrix {
        self.within.add(&self.shift_cov)
    }
}

const CHUNK: usize = 256;

/// Monte Carlo over `draws` design realizations. Draw `s` uses substream `s`,
/// so calls sharing `rng` see the same designs.
pub fn design_moments(
    rng: &RngStream,
    eig: &EigenSystem,
    design: &SamplingDesign,
    shift: &MeanDiff,
    tau2: f64,
    draws: usize,
    working: WorkingCovariance,
) -> Result<DesignMoments> {
    if draws < 2 {
        return Err(invalid("need at least 2 design draws"));
    }
    design.validate()?;
    let k = eig.k();
    // a fixed schedule has one design; two identical draws keep the covariance defined
    let draws = if design.is_deterministic() { 2 } else { draws };
    let chunks: Vec<(Matrix, Vec<Vec<f64>>)> = (0..draws.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut within = Matrix::zeros(k, k);
            let mut shifts = Vec::with_capacity(CHUNK);
            for s in c * CHUNK..((c + 1) * CHUNK).min(draws) {
                let mut r = rng.substream(s as u64);
                let times = design.draw_times(&mut r);
                let map = ScoreMap::new(eig, &times, tau2, working)?;
                within.add_scaled(&map.score_cov(), 1.0);
                let eta: Vec<f64> = times.iter().map(|&t| shift.eval(t)).collect();
                shifts.push(map.apply(&eta));
            }
            Ok((within, shifts))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut within = Matrix::zeros(k, k);
    let mut shifts = Vec::with_capacity(draws);
    for (w, s) in chunks {
        within.add_scaled(&w, 1.0);
        shifts.extend(s);
    }
    let within = within.scale(1.0 / draws as f64).symmetrize();
    let (shift_mean, shift_cov) = mean_and_cov(&shifts);
    Ok(DesignMoments { within, shift_cov, shift_mean, draws })
}

/// `Λ_g` for one group: offset `MeanDiff::Zero` for group 1, `η` for group 2.
pub fn score_cov_mc(
    rng: &RngStream,
    eig: &EigenSystem,
    design: &SamplingDesign,
    offset: &MeanDiff,
    tau2: f64,
    draws: usize,
) -> Result<Matrix> {
    let m = design_moments(rng, eig, design, offset, tau2, draws, WorkingCovariance::for_system(eig))?;
    Ok(m.lambda2())
}

/// Sample mean and covariance (divisor `n − 1`, two-pass).
pub fn mean_and_cov(rows: &[Vec<f64>]) -> (Vec<f64>, Matrix) {
    let n = rows.len();
    let k = rows.first().map_or(0, |r| r.len());
    let mut mean = vec![0.0; k];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    let mut cov = Matrix::zeros(k, k);
    for r in rows {
        for a in 0..k {
            let da = r[a] - mean[a];
            for b in a..k {
                cov[(a, b)] += da * (r[b] - mean[b]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for a in 0..k {
        for b in a..k {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    (mean, cov)
}

/// Scores of both groups with their sample covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageScoreSet {
    pub group1: Vec<Vec<f64>>,
    pub group2: Vec<Vec<f64>>,
    pub lambda1: Matrix,
    pub lambda2: Matrix,
    pub pooled: Matrix,
}

impl ShrinkageScoreSet {
    pub fn new(group1: Vec<Vec<f64>>, group2: Vec<Vec<f64>>) -> Result<Self> {
        let (lambda1, lambda2, pooled) = score_cov_empirical(&group1, &group2)?;
        Ok(ShrinkageScoreSet { group1, group2, lambda1, lambda2, pooled })
    }

    pub fn k(&self) -> usize {
        self.lambda1.rows()
    }
}

/// `(Λ̂₁, Λ̂₂, Λ̂_pooled)` with divisors `n_g − 1` and `n − 2`.
pub fn score_cov_empirical(group1: &[Vec<f64>], group2: &[Vec<f64>]) -> Result<(Matrix, Matrix, Matrix)> {
    let (n1, n2) = (group1.len(), group2.len());
    if n1 < 2 || n2 < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 subjects per group, got {n1} and {n2}")));
    }
    let k = group1[0].len();
    if group1.iter().chain(group2).any(|s| s.len() != k) {
        return Err(invalid("score vectors differ in length"));
    }
    let (_, c1) = mean_and_cov(group1);
    let (_, c2) = mean_and_cov(group2);
    let mut pooled = c1.scale((n1 - 1) as f64);
    pooled.add_scaled(&c2, (n2 - 1) as f64);
    let pooled = pooled.scale(1.0 / (n1 + n2 - 2) as f64);
    Ok((c1, c2, pooled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigengrid::{eigen_from_kernel, midpoint_grid};
    use crate::process::CovarianceKernel;

    fn flat_system() -> EigenSystem {
        let grid = midpoint_grid(20);
        EigenSystem::from_parts(grid.clone(), vec![1.0], vec![vec![1.0; 20]]).unwrap()
    }

    #[test]
    fn scalar_closed_form() {
        let sys = flat_system();
        let z = blup_scores(&[0.4], &[2.0], &sys, 1.0, &|_| 0.0).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_residual_zero_score() {
        let sys = eigen_from_kernel(&CovarianceKernel::NonStationaryRank2, 50, 0.9).unwrap();
        let t = [0.1, 0.4, 0.8];
        let mu = |t: f64| 3.0 * t;
        let y: Vec<f64> = t.iter().map(|&s| mu(s)).collect();
        assert_eq!(blup_scores(&t, &y, &sys, 0.01, &mu).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn dense_observation_recovers_projection() {
        let sys = eigen_from_kernel(&CovarianceKernel::NonStationaryRank2, 100, 0.9).unwrap();
        let y: Vec<f64> = sys.functions[0].iter().map(|v| 1.3 * v).collect();
        let z = blup_scores(&sys.grid, &y, &sys, 1e-8, &|_| 0.0).unwrap();
        assert!((z[0] - 1.3).abs() < 1e-3 && z[1].abs() < 1e-3, "{z:?}");
    }

    #[test]
    fn scalar_shrinkage_contracts() {
        let sys = flat_system();
        for &tau2 in &[0.0, 0.1, 1.0, 10.0] {
            let z = blup_scores(&[0.5], &[-3.0], &sys, tau2, &|_| 0.0).unwrap();
            assert!(z[0].abs() <= 3.0 + 1e-12);
        }
    }

    #[test]
    fn null_offset_has_no_shift_term() {
        let sys = eigen_from_kernel(&CovarianceKernel::Car1 { variance: 1.0, base: 0.5 }, 50, 0.9).unwrap();
        let design = SamplingDesign::uniform_fixed(5);
        let rng = RngStream::new(4);
        let m = design_moments(&rng, &sys, &design, &MeanDiff::Zero, 0.001, 500, WorkingCovariance::ExactKernel)
            .unwrap();
        assert!(m.shift_cov.max_abs() <= 1e-12);
        assert_eq!(m.lambda1(), m.lambda2());
    }

    #[test]
    fn fixed_design_is_single_draw_value() {
        let sys = eigen_from_kernel(&CovarianceKernel::Car1 { variance: 1.0, base: 0.5 }, 50, 0.9).unwrap();
        let sched = vec![0.0, 0.3, 0.6, 1.0];
        let design = SamplingDesign::schedule(sched.clone());
        let lam = score_cov_mc(&RngStream::new(1), &sys, &design, &MeanDiff::cubic(1.0), 0.001, 1000).unwrap();
        let direct = ScoreMap::new(&sys, &sched, 0.001, WorkingCovariance::ExactKernel).unwrap().score_cov();
        assert!(lam.sub(&direct).max_abs() < 1e-14);
    }

    #[test]
    fn empirical_cov_by_hand() {
        let (c1, _, _) = score_cov_empirical(&[vec![0.0], vec![2.0]], &[vec![1.0], vec![1.0]]).unwrap();
        assert!((c1[(0, 0)] - 2.0).abs() < 1e-15);
        let same = vec![vec![1.0, 2.0]; 5];
        let (a, b, p) = score_cov_empirical(&same, &same).unwrap();
        assert_eq!(a.max_abs() + b.max_abs() + p.max_abs(), 0.0);
        assert!(score_cov_empirical(&[vec![1.0]], &same).is_err());
    }

    #[test]
    fn pooled_is_weighted_average() {
        let g1 = vec![vec![0.0, 1.0], vec![2.0, 0.5], vec![1.0, -1.0]];
        let g2 = vec![vec![3.0, 1.0], vec![-1.0, 2.0], vec![0.0, 0.0], vec![1.0, 1.0]];
        let s = ShrinkageScoreSet::new(g1, g2).unwrap();
        let mut expect = s.lambda1.scale(2.0);
        expect.add_scaled(&s.lambda2, 3.0);
        assert!(s.pooled.sub(&expect.scale(1.0 / 5.0)).max_abs() < 1e-14);
    }
}
