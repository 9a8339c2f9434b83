//! Strategic network formation with mean-variance agents.
//!
//! Agents negotiate a symmetric matrix of bilateral contracts `W` and an
//! antisymmetric matrix of per-unit payments `P`. This crate computes the
//! unique stable network for a matrix of negotiating positions, the
//! Nash-equilibrium deviations of any set of strategic agents, closed forms
//! for two small model networks, and a robust-regression pipeline that
//! recovers beliefs and the strategic set from an observed network.
//!
//! Conventions used throughout:
//! - matrices are column-major [`nalgebra::DMatrix<f64>`]; column `i` of the
//!   belief matrix `M` is agent `i`'s vector of mean returns;
//! - agents are indexed from zero;
//! - `P[(j, i)]` is the per-unit payment agent `i` makes to agent `j`.

// Checks written as `!(x > 0.0)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{} vs {} (tol {:e})", a, b, $tol);
    }};
}

pub mod datagen;
pub mod error;
pub mod experiments;
pub mod io;
pub mod learning;
pub mod linalg;
pub mod model_networks;
pub mod network;
pub mod strategy;

pub use error::{Error, Result};
pub use linalg::{AffineSolutionSet, Mat, Vector};
pub use network::{NetworkSetting, RiskModel, StableNetwork};
pub use strategy::{LktOperators, NashSolution};
