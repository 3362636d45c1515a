//! Multi-scale factor sharing: an aggregate normal DLM on log total
//! transactions supplies a simulated day-of-week factor to item models.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::{Covariates, FutureCovariates, SCALED_LOG_PRICE};
use crate::dglm::{evolve, reference_prior, Dglm, DglmSpec, Family, FixedComponent, StateMoments};
use crate::error::{Error, Result};
use crate::numerics::sampling::gamma_draw;
use crate::numerics::RngStream;

pub const TREND: &str = "trend";
pub const WEEKLY: &str = "weekly";
pub const YEARLY: &str = "yearly";

/// Structure and discounts of the aggregate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregateConfig {
    pub trend_discount: f64,
    pub regression_discount: f64,
    pub seasonal_discount: f64,
    pub volatility_discount: f64,
    pub weekly_harmonics: u32,
    pub yearly_harmonics: u32,
    /// Prior variance of each yearly Fourier coordinate; a short training
    /// window cannot identify the yearly cycle.
    pub yearly_prior_variance: f64,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        Self {
            trend_discount: 0.995,
            regression_discount: 0.995,
            seasonal_discount: 0.999,
            volatility_discount: 0.999,
            weekly_harmonics: 3,
            yearly_harmonics: 2,
            yearly_prior_variance: 0.01,
        }
    }
}

/// Standardization of the log average price over the training window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceScaling {
    pub center: f64,
    pub scale: f64,
}

impl PriceScaling {
    pub fn fit(prices: &[f64]) -> Result<Self> {
        if prices.is_empty() {
            return Err(Error::EmptyInput("training prices".into()));
        }
        if prices.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::Domain("prices must be positive".into()));
        }
        let logs: Vec<f64> = prices.iter().map(|p| p.ln()).collect();
        let n = logs.len() as f64;
        let center = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|l| (l - center).powi(2)).sum::<f64>() / n;
        let scale = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        Ok(Self { center, scale })
    }

    pub fn apply(&self, price: f64) -> f64 {
        (price.ln() - self.center) / self.scale
    }
}

/// Serializable state of an [`AggregateModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCheckpoint {
    pub dlm: crate::dglm::DglmCheckpoint,
    pub scaling: PriceScaling,
    pub zero_days: usize,
}

/// Normal DLM on log aggregate daily transactions.
#[derive(Debug, Clone)]
pub struct AggregateModel {
    dlm: Dglm,
    scaling: PriceScaling,
    weekly: DVector<f64>,
    zero_days: usize,
}

impl AggregateModel {
    pub fn spec(config: &AggregateConfig) -> Result<DglmSpec> {
        let mut b = DglmSpec::builder(Family::Normal)
            .linear_trend(TREND, TREND)
            .covariate(SCALED_LOG_PRICE, "regression")
            .fourier(WEEKLY, 7.0, config.weekly_harmonics, WEEKLY)
            .discount(TREND, config.trend_discount)
            .discount("regression", config.regression_discount)
            .discount(WEEKLY, config.seasonal_discount)
            .volatility_discount(config.volatility_discount);
        if config.yearly_harmonics > 0 {
            b = b.fourier(YEARLY, 365.0, config.yearly_harmonics, YEARLY).discount(YEARLY, config.seasonal_discount);
        }
        b.build()
    }

    /// Prior from a least-squares reference fit over the training window;
    /// the returned model is positioned at the window's last day.
    pub fn from_training(totals: &[u64], prices: &[f64], config: &AggregateConfig) -> Result<Self> {
        if totals.len() != prices.len() {
            return Err(Error::DimensionMismatch {
                expected: totals.len(),
                actual: prices.len(),
            });
        }
        if totals.len() < 2 {
            return Err(Error::EmptyInput("aggregate training window".into()));
        }
        let spec = Self::spec(config)?;
        let scaling = PriceScaling::fit(prices)?;
        let mut obs = Vec::with_capacity(totals.len());
        for (t, (&total, &price)) in totals.iter().zip(prices).enumerate() {
            let f = spec.regression_vector(&Covariates::new().with(SCALED_LOG_PRICE, scaling.apply(price)))?;
            obs.push((t, f, log_total(total)));
        }
        let fixed: Vec<FixedComponent> = if config.yearly_harmonics > 0 {
            vec![FixedComponent::new(YEARLY, 0.0, config.yearly_prior_variance)]
        } else {
            Vec::new()
        };
        let (prior, vol) = reference_prior(&spec, &obs, totals.len() - 1, &fixed)?;
        Self::new(spec, prior, vol, scaling)
    }

    pub fn new(spec: DglmSpec, prior: StateMoments, vol: crate::dglm::VolatilityState, scaling: PriceScaling) -> Result<Self> {
        let weekly_coords = spec.coords_named(WEEKLY);
        let full = spec.regression_vector(&Covariates::new().with(SCALED_LOG_PRICE, 0.0))?;
        let mut weekly = DVector::zeros(spec.state_dim());
        for i in weekly_coords {
            weekly[i] = full[i];
        }
        Ok(Self {
            dlm: Dglm::normal(spec, prior, vol)?,
            scaling,
            weekly,
            zero_days: 0,
        })
    }

    pub fn dlm(&self) -> &Dglm {
        &self.dlm
    }

    pub fn scaling(&self) -> PriceScaling {
        self.scaling
    }

    /// Days on which a zero total was replaced by one inside the log.
    pub fn zero_days(&self) -> usize {
        self.zero_days
    }

    pub fn covariates(&self, avg_price: f64) -> Covariates {
        Covariates::new().with(SCALED_LOG_PRICE, self.scaling.apply(avg_price))
    }

    /// One filtering step on log(total).
    pub fn update_aggregate(&mut self, total: u64, avg_price: f64) -> Result<()> {
        if !(avg_price > 0.0) {
            return Err(Error::Domain(format!("average price must be positive, got {avg_price}")));
        }
        if total == 0 {
            self.zero_days += 1;
            warn!("aggregate total is zero; using log(1)");
        }
        let step = self.dlm.one_step(&self.covariates(avg_price), 0)?;
        self.dlm.update(step, log_total(total))
    }

    /// Posterior-mean weekly effect `back` days before the current day,
    /// obtained by running the evolution backwards.
    pub fn factor_mean_back(&self, back: usize) -> Result<f64> {
        let g = self.dlm.spec().evolution_matrix();
        let inv = g
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Domain("aggregate evolution matrix is singular".into()))?;
        let mut m = self.dlm.posterior().m.clone();
        for _ in 0..back {
            m = &inv * m;
        }
        Ok(self.weekly.dot(&m))
    }

    pub fn checkpoint(&self) -> AggregateCheckpoint {
        AggregateCheckpoint {
            dlm: self.dlm.checkpoint(),
            scaling: self.scaling,
            zero_days: self.zero_days,
        }
    }

    pub fn restore(config: &AggregateConfig, checkpoint: AggregateCheckpoint) -> Result<Self> {
        let spec = Self::spec(config)?;
        let dlm = Dglm::restore(spec.clone(), checkpoint.dlm)?;
        let vol = dlm
            .volatility()
            .ok_or_else(|| Error::Config("aggregate checkpoint lacks a volatility state".into()))?;
        let mut m = Self::new(spec, dlm.posterior().clone(), vol, checkpoint.scaling)?;
        m.zero_days = checkpoint.zero_days;
        Ok(m)
    }

    /// Posterior mean of the weekly component's contribution today.
    pub fn factor_mean(&self) -> f64 {
        self.weekly.dot(&self.dlm.posterior().m)
    }

    /// Draws `m` paths of the weekly effect over the next `k` days by
    /// forward state simulation from the current posterior.
    pub fn simulate_factor_paths(&self, k: usize, future_prices: &[f64], m: usize, rng: &RngStream) -> Result<FactorPaths> {
        if k == 0 {
            return Err(Error::Domain("factor horizon must be positive".into()));
        }
        if m == 0 {
            return Err(Error::Domain("factor path count must be positive".into()));
        }
        if future_prices.len() < k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: future_prices.len(),
            });
        }
        let spec = self.dlm.spec();
        let vol = self.dlm.volatility().expect("aggregate model is normal");
        let post = self.dlm.posterior();
        let g = spec.evolution_matrix().clone();
        let rho = spec.rho();

        // Covariances in units of the observation variance; they do not
        // depend on the simulated outcomes, so the evolution noise factors
        // are shared by every path.
        let mut c = StateMoments {
            m: post.m.clone(),
            c: &post.c / vol.s,
        };
        let initial = psd_sqrt(&c.c);
        let mut noise = Vec::with_capacity(k);
        for price in future_prices.iter().take(k) {
            let p = &g * &c.c * g.transpose();
            let r = evolve(&c, spec)?;
            noise.push(psd_sqrt(&(&r.c - &p)));
            let f = spec.regression_vector(&self.covariates(*price))?;
            let rf = &r.c * &f;
            let q = f.dot(&rf) / rho + 1.0;
            c = StateMoments {
                m: r.m,
                c: &r.c - (&rf * rf.transpose()) / q,
            };
            c.symmetrize();
        }

        let n = vol.n;
        let s = vol.s;
        let dim = spec.state_dim();
        let rows = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut r = rng.substream(i as u64);
                let v = if n.is_finite() { 1.0 / gamma_draw(n / 2.0, n * s / 2.0, &mut r)? } else { s };
                let sd = v.sqrt();
                let mut theta = &post.m + &initial * standard_normal(dim, &mut r) * sd;
                let mut row = Vec::with_capacity(k);
                for l in &noise {
                    theta = &g * theta + l * standard_normal(dim, &mut r) * sd;
                    row.push(self.weekly.dot(&theta));
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        FactorPaths::from_rows(rows)
    }
}

fn log_total(total: u64) -> f64 {
    (total.max(1) as f64).ln()
}

fn standard_normal(dim: usize, rng: &mut RngStream) -> DVector<f64> {
    use rand_distr::{Distribution, StandardNormal};
    DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

/// Square root L with L L′ = A for a positive semi-definite A; tiny negative
/// eigenvalues from rounding are treated as zero.
fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// `paths × horizon` matrix of simulated factor values, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPaths {
    paths: usize,
    horizon: usize,
    phi: Vec<f64>,
}

impl FactorPaths {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let paths = rows.len();
        if paths == 0 {
            return Err(Error::EmptyInput("factor paths".into()));
        }
        let horizon = rows[0].len();
        if rows.iter().any(|r| r.len() != horizon) {
            return Err(Error::Domain("factor paths must share one horizon".into()));
        }
        let phi = rows.concat();
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("factor paths must be finite".into()));
        }
        Ok(Self { paths, horizon, phi })
    }

    /// Every path equal to the zero factor.
    pub fn zeros(paths: usize, horizon: usize) -> Self {
        Self {
            paths,
            horizon,
            phi: vec![0.0; paths * horizon],
        }
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn value(&self, path: usize, day: usize) -> f64 {
        self.phi[path * self.horizon + day]
    }

    pub fn row(&self, path: usize) -> &[f64] {
        &self.phi[path * self.horizon..(path + 1) * self.horizon]
    }

    /// Mean over paths at horizon day `day` (0-based).
    pub fn mean_at(&self, day: usize) -> f64 {
        (0..self.paths).map(|i| self.value(i, day)).sum::<f64>() / self.paths as f64
    }

    /// Writes `path,h1,…,hk` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = (1..=self.horizon).map(|h| format!("h{h}")).collect();
        writeln!(w, "path,{}", header.join(","))?;
        for i in 0..self.paths {
            let vals: Vec<String> = self.row(i).iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{i},{}", vals.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Makes path `i` of an item forecast read factor row `i`.
pub fn bind_factor(future: FutureCovariates, factor: Arc<FactorPaths>, paths: usize) -> Result<FutureCovariates> {
    if factor.paths() != paths {
        return Err(Error::DimensionMismatch {
            expected: paths,
            actual: factor.paths(),
        });
    }
    future.with_factor(factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn weekly_series(days: usize, rng: &mut RngStream) -> (Vec<u64>, Vec<f64>) {
        let mut totals = Vec::new();
        let mut prices = Vec::new();
        for t in 0..days {
            let w = 0.3 * (2.0 * PI * t as f64 / 7.0).cos() + 0.1 * (4.0 * PI * t as f64 / 7.0).sin();
            let noise = 0.02 * (rng.uniform() - 0.5);
            totals.push((200.0 * (w + noise).exp()).round() as u64);
            prices.push(1.5 + 0.1 * rng.uniform());
        }
        (totals, prices)
    }

    fn pattern(t: usize) -> f64 {
        0.3 * (2.0 * PI * t as f64 / 7.0).cos() + 0.1 * (4.0 * PI * t as f64 / 7.0).sin()
    }

    #[test]
    fn recovers_weekly_pattern() {
        let mut rng = RngStream::new(4, 4);
        let (totals, prices) = weekly_series(400, &mut rng);
        let cfg = AggregateConfig::default();
        let mut model = AggregateModel::from_training(&totals[..21], &prices[..21], &cfg).unwrap();
        for t in 21..totals.len() {
            model.update_aggregate(totals[t], prices[t]).unwrap();
        }
        let last = totals.len() - 1;
        let var = model.weekly.dot(&(&model.dlm.posterior().c * &model.weekly));
        assert!((model.factor_mean() - pattern(last)).abs() < 3.0 * var.sqrt() + 0.01, "{} vs {}", model.factor_mean(), pattern(last));
    }

    #[test]
    fn one_step_factor_mean_matches_posterior() {
        let mut rng = RngStream::new(5, 5);
        let (totals, prices) = weekly_series(120, &mut rng);
        let mut model = AggregateModel::from_training(&totals[..21], &prices[..21], &AggregateConfig::default()).unwrap();
        for t in 21..totals.len() {
            model.update_aggregate(totals[t], prices[t]).unwrap();
        }
        let paths = model.simulate_factor_paths(3, &[1.5; 3], 4000, &RngStream::new(1, 1)).unwrap();
        let g = model.dlm.spec().evolution_matrix();
        let expected = model.weekly.dot(&(g * &model.dlm.posterior().m));
        let sd = (0..paths.paths()).map(|i| (paths.value(i, 0) - expected).powi(2)).sum::<f64>() / paths.paths() as f64;
        assert!((paths.mean_at(0) - expected).abs() < 4.0 * (sd / paths.paths() as f64).sqrt());
    }

    #[test]
    fn null_seasonal_state_gives_zero_factor() {
        let cfg = AggregateConfig {
            seasonal_discount: 1.0,
            yearly_harmonics: 0,
            ..AggregateConfig::default()
        };
        let spec = AggregateModel::spec(&cfg).unwrap();
        let n = spec.state_dim();
        let mut c = DMatrix::identity(n, n) * 0.1;
        for i in spec.coords_named(WEEKLY) {
            c[(i, i)] = 0.0;
        }
        let prior = StateMoments::new(DVector::from_element(n, 0.0).map(|_| 0.0), c).unwrap();
        let model = AggregateModel::new(spec, prior, crate::dglm::VolatilityState::new(10.0, 0.01).unwrap(), PriceScaling { center: 0.0, scale: 1.0 }).unwrap();
        let paths = model.simulate_factor_paths(7, &[1.0; 7], 50, &RngStream::new(2, 2)).unwrap();
        assert!((0..50).all(|i| paths.row(i).iter().all(|v| v.abs() < 1e-12)));
    }

    #[test]
    fn log_transform() {
        assert!((log_total(100) - 4.605170185988092).abs() < 1e-12);
        assert_eq!(log_total(0), 0.0);
    }

    #[test]
    fn factor_binding_checks_path_count() {
        let fut = FutureCovariates::constant(Covariates::new(), 3);
        assert!(bind_factor(fut.clone(), Arc::new(FactorPaths::zeros(5, 3)), 4).is_err());
        let bound = bind_factor(fut, Arc::new(FactorPaths::from_rows(vec![vec![0.5, 0.6, 0.7]]).unwrap()), 1).unwrap();
        assert_eq!(bound.for_path(0, 2).get(crate::covariates::FACTOR), Some(0.7));
    }

    #[test]
    fn csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("phi.csv");
        FactorPaths::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap().write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("path,h1,h2\n0,"));
        assert_eq!(text.lines().count(), 3);
    }
}
