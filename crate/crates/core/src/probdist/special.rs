//! Log-gamma, regularized incomplete beta and gamma functions, and the F and
//! χ² distribution functions built on them. Degrees of freedom are real-valued
//! throughout.

use super::ProbError;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

const CF_EPS: f64 = 1e-15;
const CF_MAX_ITER: usize = 200_000;
const TINY: f64 = 1e-300;

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Upper tail `1 - I_x(a, b)` without cancellation.
fn reg_inc_beta_upper(a: f64, b: f64, x: f64, one_minus_x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if one_minus_x <= 0.0 {
        return 0.0;
    }
    let ln_front = a * x.ln() + b * one_minus_x.ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        1.0 - ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        ln_front.exp() * beta_cf(b, a, one_minus_x) / b
    }
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        let mut sum = 1.0 / a;
        let mut term = sum;
        let mut ap = a;
        for _ in 0..CF_MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * CF_EPS {
                break;
            }
        }
        (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        1.0 - reg_upper_gamma_cf(a, x)
    }
}

fn reg_upper_gamma_cf(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..CF_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

fn check_df(df: f64) -> Result<(), ProbError> {
    if df > 0.0 && df.is_finite() {
        Ok(())
    } else {
        Err(ProbError::InvalidDf(df))
    }
}

fn check_p(p: f64) -> Result<(), ProbError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(ProbError::InvalidProbability(p))
    }
}

pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let denom = d1 * x + d2;
    reg_inc_beta(0.5 * d1, 0.5 * d2, d1 * x / denom)
}

/// Survival function `1 - CDF` of the F distribution.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let denom = d1 * x + d2;
    reg_inc_beta_upper(0.5 * d1, 0.5 * d2, d1 * x / denom, d2 / denom)
}

pub fn f_pdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = 0.5 * d1;
    let b = 0.5 * d2;
    (a * (d1 / d2).ln() + (a - 1.0) * x.ln() - (a + b) * (1.0 + d1 * x / d2).ln() - ln_beta(a, b)).exp()
}

pub fn chisq_cdf(x: f64, df: f64) -> f64 {
    reg_lower_gamma(0.5 * df, 0.5 * x)
}

pub fn chisq_pdf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = 0.5 * df;
    ((k - 1.0) * x.ln() - 0.5 * x - k * 2f64.ln() - ln_gamma(k)).exp()
}

const QUANTILE_UPPER: f64 = 1e8;

/// Safeguarded Newton on a monotone CDF over `(0, QUANTILE_UPPER)`.
fn invert_cdf(
    p: f64,
    start: f64,
    cdf: impl Fn(f64) -> f64,
    pdf: impl Fn(f64) -> f64,
) -> Result<f64, ProbError> {
    let mut lo = 0.0;
    let mut hi = QUANTILE_UPPER;
    if cdf(hi) < p {
        return Err(ProbError::QuantileOutOfRange(p));
    }
    let mut x = start.clamp(1e-12, hi);
    for _ in 0..400 {
        let c = cdf(x);
        let err = c - p;
        if err.abs() <= 1e-15 {
            return Ok(x);
        }
        if err < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = pdf(x);
        let newton = x - err / dens;
        x = if dens > 0.0 && newton > lo && newton < hi {
            newton
        } else if hi / lo.max(1e-300) > 4.0 && lo > 0.0 {
            // geometric bisection while the bracket spans orders of magnitude
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * hi {
            return Ok(x);
        }
    }
    Ok(x)
}

/// `x` with `CDF_F(x; d1, d2) = p`.
pub fn f_quantile(p: f64, d1: f64, d2: f64) -> Result<f64, ProbError> {
    check_p(p)?;
    check_df(d1)?;
    check_df(d2)?;
    invert_cdf(p, 1.0, |x| f_cdf(x, d1, d2), |x| f_pdf(x, d1, d2))
}

pub fn chisq_quantile(p: f64, df: f64) -> Result<f64, ProbError> {
    check_p(p)?;
    check_df(df)?;
    invert_cdf(p, df.max(0.5), |x| chisq_cdf(x, df), |x| chisq_pdf(x, df))
}

/// Upper-tail p-value of a Hotelling statistic `t` under the scaled F null:
/// `1 - CDF_F(t (n-K-1) / ((n-2) K); K, n-K-1)`.
pub fn scaled_f_pvalue(t: f64, k: usize, n: usize) -> Result<f64, ProbError> {
    if k == 0 || n < k + 2 {
        return Err(ProbError::InvalidParameter(format!(
            "need n - K - 1 >= 1 (K = {k}, n = {n})"
        )));
    }
    let d2 = (n - k - 1) as f64;
    let kf = k as f64;
    let scaled = t * d2 / ((n as f64 - 2.0) * kf);
    Ok(f_sf(scaled, kf, d2))
}
