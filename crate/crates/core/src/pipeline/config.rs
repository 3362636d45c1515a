use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dbcm::ExcessMode;
use crate::error::{Error, Result};
use crate::multiscale::AggregateConfig;
use crate::numerics::SolverOptions;

/// Item model variants compared by an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// DCMM fitted directly to daily sales.
    Benchmark,
    /// DCMM for transactions and cascade for units, items independent.
    Dbcm,
    /// As `Dbcm`, with the aggregate day-of-week factor as a regressor.
    MultiscaleDbcm,
}

impl ModelVariant {
    pub fn label(self) -> &'static str {
        match self {
            ModelVariant::Benchmark => "benchmark",
            ModelVariant::Dbcm => "dbcm",
            ModelVariant::MultiscaleDbcm => "multiscale_dbcm",
        }
    }
}

/// Which training proportion sets a cascade level's prior mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CascadePriorRule {
    /// Share of baskets above r among those above r − 1.
    Exceedance,
    /// Share of baskets with exactly r units among those with at least r.
    Exact,
}

/// Source of regressors on forecast days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FutureCovariateMode {
    /// Price and promotion held at the origin day's values.
    ForwardFill,
    /// The observed values of the forecast days.
    Realized,
    /// Values read from `future_covariates_file`.
    File,
}

/// Discount factors of the item models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscountConfig {
    pub poisson: f64,
    pub bernoulli: f64,
    pub cascade_level: f64,
    pub cascade_promo: f64,
}

impl Default for DiscountConfig {
    fn default() -> Self {
        Self {
            poisson: 0.99,
            bernoulli: 0.999,
            cascade_level: 0.999,
            cascade_promo: 1.0,
        }
    }
}

/// Full experiment configuration. Every field can be set from a TOML file;
/// missing fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Days used to set priors.
    pub training_days: usize,
    /// Days filtered after training before the first forecast origin.
    pub fit_days: usize,
    /// Number of forecast origins.
    pub forecast_days: usize,
    pub horizon: usize,
    pub paths: usize,
    /// Random-effects discounts swept for the DCMM count component.
    pub rho_grid: Vec<f64>,
    /// Random-effects discount of the DCMM binary component.
    pub binary_rho: f64,
    pub depth: usize,
    pub weekly_harmonics: u32,
    pub discounts: DiscountConfig,
    pub aggregate: AggregateConfig,
    pub excess_mode: ExcessMode,
    pub cascade_prior: CascadePriorRule,
    pub models: Vec<ModelVariant>,
    pub coverage_levels: Vec<f64>,
    pub future_covariates: FutureCovariateMode,
    pub future_covariates_file: Option<PathBuf>,
    pub solver_tolerance: f64,
    pub solver_max_iterations: usize,
    pub write_samples: bool,
    pub items: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            training_days: 21,
            fit_days: 365,
            forecast_days: 322,
            horizon: 14,
            paths: 500,
            rho_grid: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            binary_rho: 1.0,
            depth: 4,
            weekly_harmonics: 3,
            discounts: DiscountConfig::default(),
            aggregate: AggregateConfig::default(),
            excess_mode: ExcessMode::Empirical,
            cascade_prior: CascadePriorRule::Exceedance,
            models: vec![ModelVariant::Benchmark, ModelVariant::Dbcm, ModelVariant::MultiscaleDbcm],
            coverage_levels: vec![0.5, 0.8, 0.9, 0.95],
            future_covariates: FutureCovariateMode::ForwardFill,
            future_covariates_file: None,
            solver_tolerance: 1e-8,
            solver_max_iterations: 100,
            write_samples: false,
            items: None,
            seed: 20_170_320,
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            tolerance: self.solver_tolerance,
            max_iterations: self.solver_max_iterations,
        }
    }

    pub fn uses_multiscale(&self) -> bool {
        self.models.contains(&ModelVariant::MultiscaleDbcm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.training_days < 2 {
            return Err(Error::Config("training window needs at least two days".into()));
        }
        if self.horizon == 0 || self.paths == 0 {
            return Err(Error::Config("horizon and path count must be positive".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("cascade depth must be positive".into()));
        }
        if self.rho_grid.is_empty() {
            return Err(Error::Config("rho grid is empty".into()));
        }
        for &r in &self.rho_grid {
            unit_interval("rho", r)?;
        }
        unit_interval("binary_rho", self.binary_rho)?;
        let d = &self.discounts;
        for (n, v) in [
            ("poisson discount", d.poisson),
            ("bernoulli discount", d.bernoulli),
            ("cascade level discount", d.cascade_level),
            ("cascade promo discount", d.cascade_promo),
            ("aggregate trend discount", self.aggregate.trend_discount),
            ("aggregate regression discount", self.aggregate.regression_discount),
            ("aggregate seasonal discount", self.aggregate.seasonal_discount),
            ("volatility discount", self.aggregate.volatility_discount),
        ] {
            unit_interval(n, v)?;
        }
        for &l in &self.coverage_levels {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::Config(format!("coverage levels must lie in (0, 1), got {l}")));
            }
        }
        if self.models.is_empty() {
            return Err(Error::Config("no model variants selected".into()));
        }
        if self.future_covariates == FutureCovariateMode::File && self.future_covariates_file.is_none() {
            return Err(Error::Config("future covariate mode 'file' needs future_covariates_file".into()));
        }
        if !(self.solver_tolerance > 0.0) || self.solver_max_iterations == 0 {
            return Err(Error::Config("solver tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}
