//! Distribution functions, quantiles and samplers: normal, multivariate
//! normal, central χ² with real degrees of freedom, non-central χ²₁, and F.

mod rng;
mod sampling;
mod special;

use thiserror::Error;

pub use rng::RngStream;
pub use sampling::{
    chisq_sample, gamma_sample, mvn_sample, noncentral_chisq1_sample, psd_factor, standard_normal, MvnSampler,
};
pub use special::{
    chisq_cdf, chisq_quantile, f_cdf, f_pdf, f_quantile, f_sf, ln_gamma, reg_inc_beta, reg_lower_gamma,
    scaled_f_pvalue,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),
    #[error("degrees of freedom {0} must be positive and finite")]
    InvalidDf(f64),
    #[error("quantile for p = {0} exceeds the search bracket")]
    QuantileOutOfRange(f64),
    #[error("{0}")]
    InvalidParameter(String),
}
