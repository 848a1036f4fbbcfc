//! Leading eigenvalues and eigenfunctions of a covariance kernel on a midpoint
//! grid, truncated by proportion of variance explained.

use log::warn;

use crate::error::{invalid, Error, Result};
use crate::linalg::{sym_eigen, Matrix, SymEigen};
use crate::process::{interp_linear, CovarianceKernel, MeanDiff};

pub const MAX_COMPONENTS: usize = 20;
pub const DEFAULT_PVE: f64 = 0.95;
pub const DEFAULT_GRID: usize = 100;

/// Relative cut below which eigenvalues are treated as numerical noise.
const NOISE_FLOOR: f64 = 1e-10;

/// Midpoint grid `(r − ½)/R`, `r = 1..R`.
pub fn midpoint_grid(r: usize) -> Vec<f64> {
    (0..r).map(|i| (i as f64 + 0.5) / r as f64).collect()
}

/// Truncated eigensystem. `functions[k][r]` is `ψ_k(t_r)`, normalized so that
/// `h Σ_r ψ_j ψ_k = δ_jk`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub grid: Vec<f64>,
    pub step: f64,
    pub values: Vec<f64>,
    pub functions: Vec<Vec<f64>>,
    pub pve_achieved: f64,
    /// Variance not captured by the retained components, `Σ_{k>K} λ_k`.
    pub residual_variance: f64,
    /// True when PVE asked for more than `MAX_COMPONENTS`.
    pub capped: bool,
    /// Source kernel, if known. Enables off-grid evaluation by Nyström
    /// extension and exact working covariances.
    pub kernel: Option<CovarianceKernel>,
}

impl EigenSystem {
    pub fn k(&self) -> usize {
        self.values.len()
    }

    /// Builds a system from explicit grid values; `functions` must be
    /// orthonormal under the grid quadrature.
    pub fn from_parts(grid: Vec<f64>, values: Vec<f64>, functions: Vec<Vec<f64>>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(invalid("eigen grid needs at least 2 points"));
        }
        if values.is_empty() || values.len() != functions.len() {
            return Err(invalid("need one eigenfunction per eigenvalue"));
        }
        if functions.iter().any(|f| f.len() != grid.len()) {
            return Err(invalid("eigenfunctions must be tabulated on the grid"));
        }
        if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(invalid("eigenvalues must be positive"));
        }
        let step = 1.0 / grid.len() as f64;
        Ok(EigenSystem { grid, step, values, functions, pve_achieved: 1.0, residual_variance: 0.0, capped: false, kernel: None })
    }

    /// Truncates a decomposition of an unscaled grid covariance matrix
    /// (entries `Σ(t_r, t_s)`).
    pub fn from_decomposition(grid: Vec<f64>, eig: &SymEigen, pve: f64) -> Result<Self> {
        check_pve(pve)?;
        let r = grid.len();
        if eig.values.len() != r {
            return Err(invalid("decomposition does not match the grid"));
        }
        let h = 1.0 / r as f64;
        let top = eig.values.first().copied().unwrap_or(0.0);
        if !(top > 0.0) {
            return Err(Error::SingularCovariance("covariance has no positive eigenvalue".into()));
        }
        let kept: Vec<f64> = eig.values.iter().map(|v| v * h).take_while(|&v| v > NOISE_FLOOR * top * h).collect();
        let total: f64 = kept.iter().sum();
        let mut k = kept.len();
        let mut acc = 0.0;
        for (i, v) in kept.iter().enumerate() {
            acc += v;
            if acc >= pve * total * (1.0 - 1e-12) {
                k = i + 1;
                break;
            }
        }
        let capped = k > MAX_COMPONENTS;
        if capped {
            warn!("PVE {pve} needs {k} components; capping at {MAX_COMPONENTS}");
            k = MAX_COMPONENTS;
        }
        let values = kept[..k].to_vec();
        let pve_achieved = values.iter().sum::<f64>() / total;
        let residual_variance = kept[k..].iter().sum();
        let scale = 1.0 / h.sqrt();
        let functions = (0..k).map(|j| eig.vector(j).iter().map(|x| x * scale).collect()).collect();
        Ok(EigenSystem { grid, step: h, values, functions, pve_achieved, residual_variance, capped, kernel: None })
    }

    /// Drops the kernel so evaluation falls back to interpolation and the
    /// truncated working covariance.
    pub fn without_kernel(mut self) -> Self {
        self.kernel = None;
        self
    }

    /// `Ψ` with `Ψ[j][k] = ψ_k(times[j])`.
    ///
    /// With a known continuous kernel this is the Nyström extension
    /// `ψ_k(t) = h Σ_r Σ(t, t_r) ψ_k(t_r) / λ_k`, which agrees with the grid
    /// values at grid points and stays consistent with the kernel between
    /// them. Otherwise (and for compound symmetry, whose jump makes the
    /// extension degenerate) values are interpolated linearly.
    pub fn eval_at(&self, times: &[f64]) -> Matrix {
        let k = self.k();
        match &self.kernel {
            Some(kernel) if !matches!(kernel, CovarianceKernel::CompoundSymmetry { .. }) => {
                let mut out = Matrix::zeros(times.len(), k);
                for (j, &t) in times.iter().enumerate() {
                    let row: Vec<f64> = self.grid.iter().map(|&g| kernel.value(t, g)).collect();
                    for c in 0..k {
                        let s: f64 = row.iter().zip(&self.functions[c]).map(|(a, b)| a * b).sum();
                        out[(j, c)] = self.step * s / self.values[c];
                    }
                }
                out
            }
            _ => Matrix::from_fn(times.len(), k, |j, c| interp_linear(&self.grid, &self.functions[c], times[j])),
        }
    }

    /// `Σ_k λ_k ψ_k(t) ψ_k(t′)` at the given times.
    pub fn truncated_cov(&self, times: &[f64]) -> Matrix {
        let psi = self.eval_at(times);
        let m = times.len();
        Matrix::from_fn(m, m, |a, b| (0..self.k()).map(|c| self.values[c] * psi[(a, c)] * psi[(b, c)]).sum())
    }

    /// `δ_k = h Σ_r η(t_r) ψ_k(t_r)`.
    pub fn project_meandiff(&self, meandiff: &MeanDiff) -> Vec<f64> {
        let eta: Vec<f64> = self.grid.iter().map(|&t| meandiff.eval(t)).collect();
        self.project_grid(&eta)
    }

    /// Projection of a function tabulated on the grid.
    pub fn project_grid(&self, f: &[f64]) -> Vec<f64> {
        self.functions.iter().map(|psi| self.step * psi.iter().zip(f).map(|(a, b)| a * b).sum::<f64>()).collect()
    }

    /// Largest deviation of `h ΨᵀΨ` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let k = self.k();
        let mut worst = 0.0f64;
        for a in 0..k {
            for b in 0..k {
                let ip: f64 = self.step * self.functions[a].iter().zip(&self.functions[b]).map(|(x, y)| x * y).sum::<f64>();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((ip - target).abs());
            }
        }
        worst
    }
}

fn check_pve(pve: f64) -> Result<()> {
    if pve > 0.0 && pve <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("pve must lie in (0, 1], got {pve}")))
    }
}

/// Eigensystem of `kernel` on an `r`-point midpoint grid.
pub fn eigen_from_kernel(kernel: &CovarianceKernel, r: usize, pve: f64) -> Result<EigenSystem> {
    if r < 20 {
        return Err(invalid(format!("eigen grid needs R >= 20, got {r}")));
    }
    check_pve(pve)?;
    kernel.validate()?;
    let grid = midpoint_grid(r);
    let cov = kernel.matrix_at(&grid);
    let eig = sym_eigen(&cov)?;
    let max = eig.values[0];
    let min = *eig.values.last().unwrap();
    if min < -1e-8 * max.abs() {
        return Err(Error::NotPsd { min, max });
    }
    let mut sys = EigenSystem::from_decomposition(grid, &eig, pve)?;
    sys.kernel = Some(kernel.clone());
    Ok(sys)
}
