//! Named regressor values for one day.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiscale::FactorPaths;

pub const LOG_PRICE: &str = "log_price";
pub const PROMO: &str = "promo";
pub const FACTOR: &str = "factor";
pub const SCALED_LOG_PRICE: &str = "scaled_log_price";

/// A small ordered name → value map. Lookups are linear; rows hold a
/// handful of entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    entries: Vec<(String, f64)>,
}

impl Covariates {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: &str, value: f64) {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((name.to_string(), value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn require(&self, name: &str) -> Result<f64> {
        self.get(name).ok_or_else(|| Error::MissingCovariate(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Regressor values for the days of a forecast horizon, optionally with a
/// simulated factor path per Monte Carlo path.
#[derive(Debug, Clone)]
pub struct FutureCovariates {
    days: Vec<Covariates>,
    factor: Option<Arc<FactorPaths>>,
}

impl FutureCovariates {
    pub fn new(days: Vec<Covariates>) -> Self {
        Self { days, factor: None }
    }

    /// The same covariates repeated for `k` days.
    pub fn constant(cov: Covariates, k: usize) -> Self {
        Self::new(vec![cov; k])
    }

    pub fn horizon(&self) -> usize {
        self.days.len()
    }

    pub fn day(&self, j: usize) -> &Covariates {
        &self.days[j]
    }

    pub fn factor(&self) -> Option<&FactorPaths> {
        self.factor.as_deref()
    }

    /// Binds simulated factor paths: path `i` sees row `i` as its factor value.
    pub fn with_factor(mut self, factor: Arc<FactorPaths>) -> Result<Self> {
        if factor.horizon() < self.days.len() {
            return Err(Error::DimensionMismatch {
                expected: self.days.len(),
                actual: factor.horizon(),
            });
        }
        self.factor = Some(factor);
        Ok(self)
    }

    /// Fails unless there are at least `k` days and, when a factor is bound,
    /// exactly `paths` factor paths.
    pub fn check(&self, k: usize, paths: usize) -> Result<()> {
        if self.days.len() < k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: self.days.len(),
            });
        }
        if let Some(f) = &self.factor {
            if f.paths() != paths {
                return Err(Error::DimensionMismatch {
                    expected: paths,
                    actual: f.paths(),
                });
            }
        }
        Ok(())
    }

    /// Covariates seen by Monte Carlo path `path` on horizon day `j` (0-based).
    pub fn for_path(&self, path: usize, j: usize) -> Covariates {
        let mut cov = self.days[j].clone();
        if let Some(f) = &self.factor {
            cov.set(FACTOR, f.value(path, j));
        }
        cov
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_overwrites() {
        let mut c = Covariates::new().with(PROMO, 0.0);
        c.set(PROMO, 1.0);
        assert_eq!(c.get(PROMO), Some(1.0));
        assert_eq!(c.iter().count(), 1);
        assert!(matches!(c.require(LOG_PRICE), Err(Error::MissingCovariate(_))));
    }
}
