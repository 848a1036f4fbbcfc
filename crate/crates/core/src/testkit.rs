//! Two-sample Hotelling T² on shrinkage scores.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::linalg::spd_solve_vec;
use crate::probdist::{chisq_quantile, chisq_cdf, f_quantile, scaled_f_pvalue};
use crate::shrinkage::score_cov_empirical;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// Scaled F reference with `K` and `n − K − 1` df.
    FExact,
    /// Large-sample χ²_K reference.
    ChiSquaredAsymptotic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub k: usize,
    pub n1: usize,
    pub n2: usize,
    pub alpha: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub reject: bool,
    pub rule: DecisionRule,
}

fn mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let k = rows[0].len();
    let mut m = vec![0.0; k];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|a| *a /= rows.len() as f64);
    m
}

/// `T = (n₁n₂/n) d̄ᵀ Λ̃⁻¹ d̄` with the pooled sample covariance `Λ̃`.
pub fn hotelling_statistic(scores1: &[Vec<f64>], scores2: &[Vec<f64>]) -> Result<f64> {
    let (n1, n2) = (scores1.len(), scores2.len());
    if n1 < 2 || n2 < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 subjects per group, got {n1} and {n2}")));
    }
    let k = scores1[0].len();
    if k == 0 {
        return Err(invalid("score vectors are empty"));
    }
    if n1 + n2 < k + 2 {
        return Err(Error::InsufficientData(format!("n = {} cannot support K = {k}", n1 + n2)));
    }
    let (_, _, pooled) = score_cov_empirical(scores1, scores2)?;
    let d: Vec<f64> = mean(scores1).iter().zip(mean(scores2)).map(|(a, b)| a - b).collect();
    let x = spd_solve_vec(&pooled, &d)
        .map_err(|e| Error::SingularCovariance(format!("pooled score covariance (K = {k} too large?): {e}")))?;
    let q: f64 = d.iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok((n1 * n2) as f64 / (n1 + n2) as f64 * q)
}

/// Rejection threshold `((n−2)K/(n−K−1)) F_α(K, n−K−1)`.
pub fn f_threshold(k: usize, n: usize, alpha: f64) -> Result<f64> {
    if k == 0 || n < k + 2 {
        return Err(invalid(format!("need n - K - 1 >= 1 (K = {k}, n = {n})")));
    }
    let d2 = (n - k - 1) as f64;
    let q = f_quantile(1.0 - alpha, k as f64, d2)?;
    Ok((n as f64 - 2.0) * k as f64 / d2 * q)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

pub fn test_decision(t: f64, k: usize, n1: usize, n2: usize, alpha: f64) -> Result<TestResult> {
    test_decision_with(t, k, n1, n2, alpha, DecisionRule::FExact)
}

/// Decision with `reject ⇔ T > threshold ⇔ p < α`. Floating-point
/// disagreement between the two sides only happens within roundoff of the
/// threshold; there the p-value is pinned to `α` on the non-rejecting side.
pub fn test_decision_with(
    t: f64,
    k: usize,
    n1: usize,
    n2: usize,
    alpha: f64,
    rule: DecisionRule,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid(format!("statistic must be finite and nonnegative, got {t}")));
    }
    let n = n1 + n2;
    let (threshold, mut p_value) = match rule {
        DecisionRule::FExact => (f_threshold(k, n, alpha)?, scaled_f_pvalue(t, k, n)?),
        DecisionRule::ChiSquaredAsymptotic => {
            if k == 0 {
                return Err(invalid("K must be at least 1"));
            }
            (chisq_quantile(1.0 - alpha, k as f64)?, 1.0 - chisq_cdf(t, k as f64))
        }
    };
    let reject = t > threshold;
    if reject && p_value >= alpha {
        p_value = alpha * (1.0 - f64::EPSILON);
    } else if !reject && p_value < alpha {
        p_value = alpha;
    }
    Ok(TestResult { statistic: t, k, n1, n2, alpha, threshold, p_value, reject, rule })
}

/// Statistic and decision in one call.
pub fn hotelling_test(scores1: &[Vec<f64>], scores2: &[Vec<f64>], alpha: f64) -> Result<TestResult> {
    let t = hotelling_statistic(scores1, scores2)?;
    test_decision(t, scores1[0].len(), scores1.len(), scores2.len(), alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let t = hotelling_statistic(&[vec![0.0], vec![2.0]], &[vec![1.0], vec![3.0]]).unwrap();
        assert!((t - 0.5).abs() < 1e-14);
    }

    #[test]
    fn identical_means_give_zero() {
        let g1 = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![1.0, 0.0]];
        let g2 = vec![vec![1.0, 1.0], vec![0.0, 2.0], vec![2.0, 1.0]];
        assert!(hotelling_statistic(&g1, &g2).unwrap().abs() < 1e-14);
    }

    #[test]
    fn threshold_example() {
        let thr = f_threshold(2, 100, 0.05).unwrap();
        assert!((thr - 6.244).abs() < 2e-3, "{thr}");
        let r = test_decision(thr * (1.0 + 1e-9), 2, 50, 50, 0.05).unwrap();
        assert!(r.reject && r.p_value < 0.05);
        let r = test_decision(0.0, 2, 50, 50, 0.05).unwrap();
        assert!(!r.reject && r.p_value == 1.0);
    }

    #[test]
    fn singular_pooled_is_an_error() {
        let g = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        assert!(matches!(hotelling_statistic(&g, &g), Err(Error::SingularCovariance(_))));
    }

    #[test]
    fn chisq_rule() {
        let r = test_decision_with(3.9, 1, 500, 500, 0.05, DecisionRule::ChiSquaredAsymptotic).unwrap();
        assert!(r.reject && (r.threshold - 3.8415).abs() < 1e-3);
    }

    #[test]
    fn invalid_alpha() {
        assert!(test_decision(1.0, 1, 10, 10, 0.0).is_err());
        assert!(test_decision(1.0, 1, 10, 10, 1.0).is_err());
    }
}
