//! Functional optimal transport between sets of curves.

pub mod basis;
pub mod cli;
pub mod coupling;
pub mod error;
pub mod evaluate;
pub mod funcdata;
pub mod gp_baseline;
pub mod operator;
pub mod solver;

pub use error::{FotError, Result};
