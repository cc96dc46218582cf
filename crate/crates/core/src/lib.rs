//! Simulation and analysis of 1+1 dimensional Dirac and Jackiw-Rebbi
//! dynamics for a spinor of counter-propagating slow-light polaritons.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod fit;
pub mod model;
pub mod oracle;
pub mod run;
pub mod simplex;
pub mod solver;

pub use error::{Error, Result};
