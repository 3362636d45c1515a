//! Ingestion, model construction with training-window priors, synthetic
//! data, and the rolling-origin experiment driver.

mod config;
mod data;
mod experiment;
mod models;
mod synthetic;

pub use config::{CascadePriorRule, DiscountConfig, ExperimentConfig, FutureCovariateMode, ModelVariant};
pub use data::{
    ingest, read_transactions, read_transactions_from, write_transactions, AggregateSeries, DailyItemRecord, Dataset,
    TransactionRow,
};
pub use experiment::*;
pub use models::{
    build_cascade, build_dcmm, build_model_spec, cascade_level_spec, clipped_activity, dcmm_component_spec,
    record_covariates, ItemModels,
};
pub use synthetic::{generate_synthetic, ItemScenario, Scenario, TruthDay};
