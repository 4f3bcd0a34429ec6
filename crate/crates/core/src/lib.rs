//! Wishart local normal approximation, Wishart trace moments, a Wishart
//! asymmetric-kernel density estimator on the SPD cone, and total-variation
//! scans between the Wishart and its matched symmetric matrix normal.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod densities;
pub mod error;
pub mod expansion;
pub mod kde;
pub mod quad;
pub mod sampling;
pub mod special;
pub mod stats;
pub mod symcore;
pub mod tvbounds;

pub use error::{Error, Result};
