//! Dynamic binary cascade model for units per transaction, with an excess
//! component for baskets larger than the cascade depth.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::{Covariates, FutureCovariates};
use crate::dcmm::{TransactionPath, TransactionPaths};
use crate::dglm::{Dglm, DglmCheckpoint, DglmSpec, Family};
use crate::error::{Error, Result};
use crate::evaluation::{hpd_interval, point_forecast, PointRule};
use crate::numerics::{Distribution, RngStream};

/// One day's sales dissected by basket size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayDecomposition {
    /// Number of transactions.
    pub b: u64,
    /// `n[r-1]` transactions had more than `r` units, r = 1..=d.
    pub n: Vec<u64>,
    /// Units in baskets larger than d.
    pub e: u64,
    /// Total units.
    pub y: u64,
    /// Sizes of the baskets larger than d.
    pub excess_baskets: Vec<u64>,
}

impl DayDecomposition {
    pub fn depth(&self) -> usize {
        self.n.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.n.len();
        let bad = |m: String| Err(Error::InvalidDay(m));
        if d == 0 {
            return bad("cascade depth must be positive".into());
        }
        let mut prev = self.b;
        for (r, &nr) in self.n.iter().enumerate() {
            if nr > prev {
                return bad(format!("n_{} = {nr} exceeds n_{} = {prev}", r + 1, r));
            }
            prev = nr;
        }
        let nd = self.n[d - 1];
        if nd == 0 && self.e != 0 {
            return bad("excess without baskets above the depth".into());
        }
        if self.e < (d as u64 + 1) * nd {
            return bad(format!("excess {} below the minimum {}", self.e, (d as u64 + 1) * nd));
        }
        if !self.excess_baskets.is_empty() {
            if self.excess_baskets.len() as u64 != nd || self.excess_baskets.iter().sum::<u64>() != self.e {
                return bad("excess baskets disagree with n_d and e".into());
            }
        }
        if sales_from_counts(self.b, &self.n, self.e)? != self.y {
            return bad("unit total disagrees with the cascade counts".into());
        }
        Ok(())
    }
}

/// Dissects a day's basket sizes for a cascade of depth `d`.
pub fn decompose_day(sizes: &[u64], d: usize) -> Result<DayDecomposition> {
    if d == 0 {
        return Err(Error::InvalidDay("cascade depth must be positive".into()));
    }
    if let Some(bad) = sizes.iter().find(|&&s| s == 0) {
        return Err(Error::InvalidDay(format!("basket size must be positive, got {bad}")));
    }
    let n = (1..=d as u64).map(|r| sizes.iter().filter(|&&s| s > r).count() as u64).collect();
    let excess_baskets: Vec<u64> = sizes.iter().copied().filter(|&s| s > d as u64).collect();
    let day = DayDecomposition {
        b: sizes.len() as u64,
        n,
        e: excess_baskets.iter().sum(),
        y: sizes.iter().sum(),
        excess_baskets,
    };
    debug_assert!(day.validate().is_ok());
    Ok(day)
}

/// Total units: Σ r (n_{r−1} − n_r) + e with n₀ = b.
pub fn sales_from_counts(b: u64, n: &[u64], e: u64) -> Result<u64> {
    if b == 0 {
        if n.iter().any(|&x| x > 0) || e > 0 {
            return Err(Error::InvalidDay("counts on a day without transactions".into()));
        }
        return Ok(0);
    }
    let mut prev = b;
    let mut y = e;
    for (r, &nr) in n.iter().enumerate() {
        if nr > prev {
            return Err(Error::InvalidDay(format!("n_{} = {nr} exceeds n_{} = {prev}", r + 1, r)));
        }
        y += (r as u64 + 1) * (prev - nr);
        prev = nr;
    }
    if prev == 0 && e > 0 {
        return Err(Error::InvalidDay("excess without baskets above the depth".into()));
    }
    Ok(y)
}

/// How baskets above the depth are forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcessMode {
    /// Excess is left unmodelled; forecasts are conditional on no excess.
    Unspecified,
    /// Excess basket sizes are resampled from their observed history.
    Empirical,
}

/// Frequencies of observed basket sizes above the depth.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcessStore {
    counts: BTreeMap<u64, u64>,
}

impl ExcessStore {
    pub fn add(&mut self, size: u64) {
        *self.counts.entry(size).or_insert(0) += 1;
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().map(|(&v, &w)| (v, w))
    }

    fn distribution(&self) -> Option<Distribution> {
        if self.is_empty() {
            return None;
        }
        Some(Distribution::DiscreteWeighted {
            values: self.counts.keys().copied().collect(),
            weights: self.counts.values().map(|&w| w as f64).collect(),
        })
    }
}

/// Cascade of binomial DGLMs: level r models n_r | n_{r−1}.
#[derive(Debug, Clone)]
pub struct CascadeModel {
    levels: Vec<Dglm>,
    mode: ExcessMode,
    store: ExcessStore,
}

/// Checkpoint of a cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeCheckpoint {
    pub levels: Vec<DglmCheckpoint>,
    pub mode: ExcessMode,
    pub store: ExcessStore,
}

/// `paths × horizon` simulated sales with per-day excess flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SalesPaths {
    paths: usize,
    horizon: usize,
    y: Vec<u64>,
    no_excess: Vec<bool>,
    transactions: TransactionPaths,
    mode: ExcessMode,
}

/// One simulated sales trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SalesPath {
    pub y: Vec<u64>,
    pub no_excess: Vec<bool>,
    pub b: TransactionPath,
}

impl SalesPaths {
    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn mode(&self) -> ExcessMode {
        self.mode
    }

    pub fn transactions(&self) -> &TransactionPaths {
        &self.transactions
    }

    pub fn y(&self, i: usize, j: usize) -> u64 {
        self.y[i * self.horizon + j]
    }

    pub fn no_excess(&self, i: usize, j: usize) -> bool {
        self.no_excess[i * self.horizon + j]
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.y[i * self.horizon..(i + 1) * self.horizon]
    }

    pub fn path(&self, i: usize) -> SalesPath {
        SalesPath {
            y: self.row(i).to_vec(),
            no_excess: self.no_excess[i * self.horizon..(i + 1) * self.horizon].to_vec(),
            b: self.transactions.path(i),
        }
    }

    /// Samples of day `j` across paths.
    pub fn column(&self, j: usize) -> Vec<u64> {
        (0..self.paths).map(|i| self.y(i, j)).collect()
    }
}

impl CascadeModel {
    pub fn new(levels: Vec<Dglm>, mode: ExcessMode) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("cascade needs at least one level".into()));
        }
        if levels.iter().any(|l| l.spec().family() != Family::BinomialLogistic) {
            return Err(Error::Config("cascade levels must be binomial-logistic".into()));
        }
        Ok(Self {
            levels,
            mode,
            store: ExcessStore::default(),
        })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[Dglm] {
        &self.levels
    }

    pub fn mode(&self) -> ExcessMode {
        self.mode
    }

    pub fn store(&self) -> &ExcessStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ExcessStore {
        &mut self.store
    }

    pub fn checkpoint(&self) -> CascadeCheckpoint {
        CascadeCheckpoint {
            levels: self.levels.iter().map(Dglm::checkpoint).collect(),
            mode: self.mode,
            store: self.store.clone(),
        }
    }

    pub fn restore(specs: Vec<DglmSpec>, checkpoint: CascadeCheckpoint) -> Result<Self> {
        if specs.len() != checkpoint.levels.len() {
            return Err(Error::DimensionMismatch {
                expected: specs.len(),
                actual: checkpoint.levels.len(),
            });
        }
        let levels = specs
            .into_iter()
            .zip(checkpoint.levels)
            .map(|(s, c)| Dglm::restore(s, c))
            .collect::<Result<Vec<_>>>()?;
        let mut m = Self::new(levels, checkpoint.mode)?;
        m.store = checkpoint.store;
        Ok(m)
    }

    /// Updates every level with its day's conditional binomial outcome.
    pub fn filter_step(&mut self, day: &DayDecomposition, cov: &Covariates) -> Result<()> {
        if day.depth() != self.depth() {
            return Err(Error::InvalidDay(format!(
                "day has depth {} but the cascade has {}",
                day.depth(),
                self.depth()
            )));
        }
        day.validate()?;
        let mut trials = day.b;
        for (level, &nr) in self.levels.iter_mut().zip(&day.n) {
            if trials == 0 {
                level.skip()?;
            } else {
                let step = level.one_step(cov, trials)?;
                level.update(step, nr as f64)?;
            }
            trials = nr;
        }
        if self.mode == ExcessMode::Empirical {
            for &s in &day.excess_baskets {
                self.store.add(s);
            }
        }
        Ok(())
    }

    fn simulate_path(
        &self,
        b: &[u64],
        future: &FutureCovariates,
        path: usize,
        excess: Option<&Distribution>,
        rng: &mut RngStream,
    ) -> Result<(Vec<u64>, Vec<bool>)> {
        let k = b.len();
        let d = self.depth();
        let mut levels = self.levels.clone();
        let mut ys = Vec::with_capacity(k);
        let mut flags = Vec::with_capacity(k);
        let mut n = vec![0u64; d];
        for (j, &bj) in b.iter().enumerate() {
            let cov = future.for_path(path, j);
            let last = j + 1 == k;
            let mut trials = bj;
            for (r, level) in levels.iter_mut().enumerate() {
                if trials == 0 {
                    if !last {
                        level.skip()?;
                    }
                    n[r] = 0;
                } else {
                    let step = level.one_step(&cov, trials)?;
                    let draw = step.predictive.sample(rng)?.count().expect("binomial draws are counts");
                    if !last {
                        level.update(step, draw as f64)?;
                    }
                    n[r] = draw;
                }
                trials = n[r];
            }
            let nd = n[d - 1];
            let e = if nd == 0 {
                0
            } else {
                match (self.mode, excess) {
                    (ExcessMode::Unspecified, _) => 0,
                    (ExcessMode::Empirical, Some(dist)) => {
                        let mut e = 0;
                        for _ in 0..nd {
                            e += dist.sample(rng)?.count().expect("basket sizes are counts");
                        }
                        e
                    }
                    (ExcessMode::Empirical, None) => (d as u64 + 1) * nd,
                }
            };
            let y = sales_from_counts(bj, &n, if self.mode == ExcessMode::Unspecified { 0 } else { e })?;
            debug_assert!(bj == 0 || y >= bj || (nd > 0 && self.mode == ExcessMode::Unspecified));
            ys.push(y);
            flags.push(nd == 0);
        }
        Ok((ys, flags))
    }

    /// Simulates units for each transaction path, conditioning every level
    /// along its own simulated outcomes. Path `i` uses substream `i`.
    pub fn forecast_sales_paths(
        &self,
        transactions: &TransactionPaths,
        future: &FutureCovariates,
        rng: &RngStream,
    ) -> Result<SalesPaths> {
        let m = transactions.paths();
        let k = transactions.horizon();
        future.check(k, m)?;
        let excess = match self.mode {
            ExcessMode::Empirical => {
                let dist = self.store.distribution();
                if dist.is_none() {
                    warn!("no excess baskets observed yet; simulated excess uses the minimum basket size");
                }
                dist
            }
            ExcessMode::Unspecified => None,
        };
        let rows = (0..m)
            .into_par_iter()
            .map(|i| self.simulate_path(transactions.row(i), future, i, excess.as_ref(), &mut rng.substream(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let mut y = Vec::with_capacity(m * k);
        let mut no_excess = Vec::with_capacity(m * k);
        for (ys, flags) in rows {
            y.extend(ys);
            no_excess.extend(flags);
        }
        Ok(SalesPaths {
            paths: m,
            horizon: k,
            y,
            no_excess,
            transactions: transactions.clone(),
            mode: self.mode,
        })
    }
}

/// Per-day fraction of paths with no basket above the depth.
pub fn prob_no_excess(paths: &SalesPaths) -> Vec<f64> {
    (0..paths.horizon())
        .map(|j| (0..paths.paths()).filter(|&i| paths.no_excess(i, j)).count() as f64 / paths.paths() as f64)
        .collect()
}

/// Summary of a day's sampled sales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySummary {
    pub mean: f64,
    pub median: f64,
    pub neg1_median: Option<f64>,
    /// (level, lower, upper) HPD intervals.
    pub intervals: Vec<(f64, u64, u64)>,
}

/// Coverage levels reported by the summaries.
pub const SUMMARY_LEVELS: [f64; 3] = [0.5, 0.8, 0.9];

fn summarize(samples: &[u64]) -> Result<DaySummary> {
    Ok(DaySummary {
        mean: point_forecast(samples, PointRule::Mean)?,
        median: point_forecast(samples, PointRule::Median)?,
        neg1_median: point_forecast(samples, PointRule::Neg1Median).ok(),
        intervals: SUMMARY_LEVELS
            .iter()
            .map(|&l| hpd_interval(samples, l).map(|(lo, hi)| (l, lo, hi)))
            .collect::<Result<Vec<_>>>()?,
    })
}

/// Paths with no excess on any day of the horizon, and their summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPaths {
    pub retained: Vec<usize>,
    pub fraction: f64,
    pub days: Vec<DaySummary>,
}

/// Rejection filter keeping the paths without excess over the horizon.
pub fn conditional_no_excess_paths(paths: &SalesPaths) -> Result<ConditionalPaths> {
    let k = paths.horizon();
    let retained: Vec<usize> = (0..paths.paths()).filter(|&i| (0..k).all(|j| paths.no_excess(i, j))).collect();
    if retained.is_empty() {
        return Err(Error::NoRetainedPaths { paths: paths.paths() });
    }
    let days = (0..k)
        .map(|j| summarize(&retained.iter().map(|&i| paths.y(i, j)).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConditionalPaths {
        fraction: retained.len() as f64 / paths.paths() as f64,
        retained,
        days,
    })
}

/// Mixture view of one day when excess is unmodelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDay {
    /// Probability of at least one basket above the depth.
    pub q: f64,
    /// Summaries of sales given no excess that day; `None` when no path
    /// is free of excess.
    pub conditional: Option<DaySummary>,
    /// The conditional median bounds the mixture median from below.
    pub median_lower: Option<f64>,
    /// Conditional quantile at 0.5/(1 − q); only defined for q < 0.5.
    pub median_upper: Option<f64>,
}

/// Per-day excess probability and conditional summaries. The mixture mean
/// is not reported: the excess component is unmodelled, so only bounds on
/// the median are available.
pub fn unspecified_mixture_summary(paths: &SalesPaths) -> Result<Vec<MixtureDay>> {
    if paths.mode() != ExcessMode::Unspecified {
        return Err(Error::ExcessMode("mixture summaries need the unspecified excess mode"));
    }
    let p0 = prob_no_excess(paths);
    (0..paths.horizon())
        .map(|j| {
            let q = 1.0 - p0[j];
            let mut samples: Vec<u64> = (0..paths.paths()).filter(|&i| paths.no_excess(i, j)).map(|i| paths.y(i, j)).collect();
            if samples.is_empty() {
                return Ok(MixtureDay {
                    q,
                    conditional: None,
                    median_lower: None,
                    median_upper: None,
                });
            }
            samples.sort_unstable();
            let summary = summarize(&samples)?;
            let median_upper = (q < 0.5).then(|| {
                let level = 0.5 / (1.0 - q);
                let idx = ((level * samples.len() as f64).ceil() as usize).clamp(1, samples.len()) - 1;
                samples[idx] as f64
            });
            Ok(MixtureDay {
                q,
                median_lower: Some(summary.median),
                conditional: Some(summary),
                median_upper,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dglm::StateMoments;
    use crate::numerics::{beta_moments, ConjugateParams};
    use nalgebra::{DMatrix, DVector};

    fn level(alpha: f64, beta: f64, delta: f64) -> Dglm {
        let pm = beta_moments(ConjugateParams::new(alpha, beta).unwrap());
        let spec = DglmSpec::builder(Family::BinomialLogistic).intercept("level", "level").discount("level", delta).build().unwrap();
        Dglm::new(spec, StateMoments::new(DVector::from_element(1, pm.f), DMatrix::from_element(1, 1, pm.q)).unwrap()).unwrap()
    }

    #[test]
    fn decomposition_examples() {
        let d = decompose_day(&[1, 1, 2, 3, 6], 4).unwrap();
        assert_eq!((d.b, d.n.clone(), d.e, d.y), (5, vec![3, 2, 1, 1], 6, 13));
        let d = decompose_day(&[], 4).unwrap();
        assert_eq!((d.b, d.n.clone(), d.e, d.y), (0, vec![0; 4], 0, 0));
        let d = decompose_day(&[1; 7], 4).unwrap();
        assert_eq!((d.b, d.n.clone(), d.e, d.y), (7, vec![0; 4], 0, 7));
        assert!(decompose_day(&[1, 0], 4).is_err());
    }

    #[test]
    fn sales_identity_examples() {
        assert_eq!(sales_from_counts(5, &[2, 1, 0, 0], 0).unwrap(), 8);
        assert_eq!(sales_from_counts(0, &[0, 0, 0, 0], 0).unwrap(), 0);
        assert!(sales_from_counts(2, &[3, 0], 0).is_err());
    }

    #[test]
    fn empty_day_only_evolves() {
        let mut c = CascadeModel::new(vec![level(2.0, 3.0, 0.99), level(2.0, 5.0, 0.99)], ExcessMode::Empirical).unwrap();
        let expected: Vec<_> = c.levels.iter().map(|l| crate::dglm::evolve(l.posterior(), l.spec()).unwrap()).collect();
        c.filter_step(&decompose_day(&[], 2).unwrap(), &Covariates::new()).unwrap();
        for (l, e) in c.levels.iter().zip(expected) {
            assert_eq!(l.posterior(), &e);
        }
    }

    #[test]
    fn store_collects_large_baskets() {
        let mut c = CascadeModel::new(vec![level(2.0, 3.0, 1.0), level(2.0, 5.0, 1.0)], ExcessMode::Empirical).unwrap();
        c.filter_step(&decompose_day(&[1, 3, 5, 3], 2).unwrap(), &Covariates::new()).unwrap();
        assert_eq!(c.store().iter().collect::<Vec<_>>(), vec![(3, 2), (5, 1)]);
    }

    #[test]
    fn no_transactions_no_sales() {
        let c = CascadeModel::new(vec![level(2.0, 3.0, 1.0)], ExcessMode::Empirical).unwrap();
        let tx = TransactionPaths::constant(&[0, 0, 0], 20).unwrap();
        let s = c.forecast_sales_paths(&tx, &FutureCovariates::constant(Covariates::new(), 3), &RngStream::new(1, 1)).unwrap();
        assert!((0..20).all(|i| s.row(i).iter().all(|&y| y == 0)));
        assert_eq!(prob_no_excess(&s), vec![1.0; 3]);
    }

    #[test]
    fn simulated_sales_cover_transactions() {
        let mut c = CascadeModel::new(vec![level(3.0, 3.0, 1.0), level(3.0, 3.0, 1.0)], ExcessMode::Empirical).unwrap();
        c.store_mut().add(4);
        c.store_mut().add(7);
        let tx = TransactionPaths::from_rows((0..200).map(|i| vec![i % 5, 3, (i % 3) + 1]).collect()).unwrap();
        let s = c.forecast_sales_paths(&tx, &FutureCovariates::constant(Covariates::new(), 3), &RngStream::new(2, 2)).unwrap();
        for i in 0..200 {
            for j in 0..3 {
                let b = tx.get(i, j);
                assert!(if b == 0 { s.y(i, j) == 0 } else { s.y(i, j) >= b });
            }
        }
    }

    #[test]
    fn cold_start_uses_minimal_excess() {
        let c = CascadeModel::new(vec![level(1e6, 1.0, 1.0)], ExcessMode::Empirical).unwrap();
        let tx = TransactionPaths::constant(&[2], 10).unwrap();
        let s = c.forecast_sales_paths(&tx, &FutureCovariates::constant(Covariates::new(), 1), &RngStream::new(3, 3)).unwrap();
        assert!((0..10).all(|i| s.y(i, 0) == 4 && !s.no_excess(i, 0)));
    }

    #[test]
    fn mixture_summary_requires_unspecified_mode() {
        let c = CascadeModel::new(vec![level(1.0, 4.0, 1.0)], ExcessMode::Empirical).unwrap();
        let tx = TransactionPaths::constant(&[1], 10).unwrap();
        let s = c.forecast_sales_paths(&tx, &FutureCovariates::constant(Covariates::new(), 1), &RngStream::new(3, 3)).unwrap();
        assert!(matches!(unspecified_mixture_summary(&s), Err(Error::ExcessMode(_))));
    }

    #[test]
    fn retention_error_when_every_path_has_excess() {
        let c = CascadeModel::new(vec![level(1e6, 1.0, 1.0)], ExcessMode::Unspecified).unwrap();
        let tx = TransactionPaths::constant(&[1], 10).unwrap();
        let s = c.forecast_sales_paths(&tx, &FutureCovariates::constant(Covariates::new(), 1), &RngStream::new(3, 3)).unwrap();
        assert!(matches!(conditional_no_excess_paths(&s), Err(Error::NoRetainedPaths { .. })));
    }
}
