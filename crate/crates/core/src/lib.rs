//! Power and sample-size calculations for the two-sample Hotelling test on
//! shrinkage scores of sparsely observed functional data.

pub mod eigengrid;
pub mod error;
pub mod fpca;
pub mod harness;
pub mod linalg;
pub mod pass;
pub mod probdist;
pub mod process;
pub mod shrinkage;
pub mod testkit;

pub use error::{Error, Result};
