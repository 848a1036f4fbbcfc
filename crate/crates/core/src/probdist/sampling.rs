use rand::distributions::Open01;
use rand::Rng;
use rand_distr::StandardNormal;

use super::ProbError;
use crate::linalg::{chol_spd, sym_eigen, Matrix};

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Gamma(shape, 1) by Marsaglia–Tsang; shapes below one use the `U^{1/a}` boost.
pub fn gamma_sample<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.sample(Open01);
        return gamma_sample(rng, shape + 1.0) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.sample(Open01);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// χ² with real-valued degrees of freedom.
pub fn chisq_sample<R: Rng + ?Sized>(rng: &mut R, df: f64) -> Result<f64, ProbError> {
    if !(df > 0.0 && df.is_finite()) {
        return Err(ProbError::InvalidDf(df));
    }
    Ok(2.0 * gamma_sample(rng, 0.5 * df))
}

/// Non-central χ²₁(ncp) as `(Z + √ncp)²`.
pub fn noncentral_chisq1_sample<R: Rng + ?Sized>(rng: &mut R, ncp: f64) -> Result<f64, ProbError> {
    if !(ncp >= 0.0 && ncp.is_finite()) {
        return Err(ProbError::InvalidParameter(format!("non-centrality {ncp}")));
    }
    let z = standard_normal(rng) + ncp.sqrt();
    Ok(z * z)
}

/// Multivariate normal sampler with a precomputed factor `F`, `F Fᵀ = cov`.
///
/// Tries Cholesky first and falls back to an eigenvalue-clipped factor, so
/// singular (PSD) covariances are accepted; a zero covariance returns the mean.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: Vec<f64>,
    factor: Matrix,
}

impl MvnSampler {
    pub fn new(mean: Vec<f64>, cov: &Matrix) -> Result<Self, ProbError> {
        if cov.rows() != mean.len() || !cov.is_square() {
            return Err(ProbError::InvalidParameter(format!(
                "mean has {} entries but covariance is {}x{}",
                mean.len(),
                cov.rows(),
                cov.cols()
            )));
        }
        let factor = match chol_spd(cov) {
            Ok(l) => l,
            Err(_) => psd_factor(cov)?,
        };
        Ok(MvnSampler { mean, factor })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = self.mean.len();
        let z: Vec<f64> = (0..k).map(|_| standard_normal(rng)).collect();
        let mut out = self.mean.clone();
        for i in 0..k {
            let row = self.factor.row(i);
            out[i] += row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        }
        out
    }
}

/// `U diag(√max(λ,0))`, a square-root factor for a PSD matrix.
pub fn psd_factor(cov: &Matrix) -> Result<Matrix, ProbError> {
    let eig = sym_eigen(cov).map_err(|e| ProbError::InvalidParameter(e.to_string()))?;
    let lmax = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    if let Some(&worst) = eig.values.last() {
        if worst < -1e-8 * lmax.max(f64::MIN_POSITIVE) && worst < -1e-300 {
            return Err(ProbError::InvalidParameter(format!(
                "covariance is not positive semidefinite (eigenvalue {worst:e})"
            )));
        }
    }
    let n = cov.rows();
    Ok(Matrix::from_fn(n, n, |i, k| eig.vectors[(i, k)] * eig.values[k].max(0.0).sqrt()))
}

pub fn mvn_sample<R: Rng + ?Sized>(rng: &mut R, mean: &[f64], cov: &Matrix) -> Result<Vec<f64>, ProbError> {
    Ok(MvnSampler::new(mean.to_vec(), cov)?.sample(rng))
}
