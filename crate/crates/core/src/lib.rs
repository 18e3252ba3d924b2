//! Simulation and estimation toolkit for sibling-comparison studies of
//! gene-by-environment interaction: cohort simulation, polygenic scoring,
//! fixed-effects and IV regression, declarative model specifications and
//! randomization inference.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohortsim;
pub mod error;
pub mod genoscore;
pub mod linreg;
pub mod modelspecs;
pub mod pipeline;
pub mod ri;
pub mod rng;
pub mod table;

pub use error::{Error, Result};
