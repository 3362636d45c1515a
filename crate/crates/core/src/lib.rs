//! Sequential Bayesian forecasting for transaction-sales count time series.
//!
//! Daily sales of an item are dissected into the number of transactions
//! (modelled by a dynamic count mixture model) and the number of units per
//! transaction (modelled by a dynamic binary cascade with an excess
//! component). Multi-step forecasts are produced by forward simulation, and
//! a multi-scale variant shares a day-of-week factor from an aggregate
//! dynamic linear model across items.

pub mod covariates;
pub mod dbcm;
pub mod dcmm;
pub mod dglm;
pub mod error;
pub mod evaluation;
pub mod multiscale;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
