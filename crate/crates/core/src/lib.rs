//! Per-stock intraday volume forecasting with a dual-process meta-learned
//! regressor, its classical baselines, and the surrounding data, training,
//! evaluation and reproducibility tooling.

pub mod baselines;
pub mod config;
pub mod data;
pub mod diff;
pub mod error;
pub mod eval;
pub mod meta;

pub use error::{Error, Result};
