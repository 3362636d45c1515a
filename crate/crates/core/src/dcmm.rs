//! Dynamic count mixture model: a Bernoulli DGLM for whether any
//! transaction happens and a shifted Poisson DGLM for how many.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::{Covariates, FutureCovariates};
use crate::dglm::{Dglm, DglmCheckpoint, DglmSpec, Family};
use crate::error::{Error, Result};
use crate::numerics::{Distribution, RngStream};

/// Coupled binary and count DGLMs. Both components read the same
/// covariate columns; the count component only learns on non-zero days.
#[derive(Debug, Clone)]
pub struct DcmmModel {
    binary: Dglm,
    count: Dglm,
}

/// One-step predictive of b: zero with probability 1 − π, else 1 + NegBin.
#[derive(Debug, Clone, PartialEq)]
pub struct DcmmPredictive {
    pub p_nonzero: f64,
    pub count: Distribution,
}

impl DcmmPredictive {
    pub fn pmf(&self, b: u64) -> Result<f64> {
        if b == 0 {
            Ok(1.0 - self.p_nonzero)
        } else {
            Ok(self.p_nonzero * self.count.ln_pmf(b - 1)?.exp())
        }
    }

    pub fn cdf(&self, b: u64) -> Result<f64> {
        if b == 0 {
            Ok(1.0 - self.p_nonzero)
        } else {
            Ok(((1.0 - self.p_nonzero) + self.p_nonzero * self.count.cdf(b - 1)?).min(1.0))
        }
    }

    pub fn mean(&self) -> f64 {
        self.p_nonzero * (1.0 + self.count.mean())
    }
}

/// One-step diagnostics, computed before the day's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDiagnostics {
    pub log_score: f64,
    pub pit: f64,
    pub mean: f64,
    pub p_nonzero: f64,
}

/// Checkpoint of both DCMM components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcmmCheckpoint {
    pub binary: DglmCheckpoint,
    pub count: DglmCheckpoint,
}

/// A single simulated transactions trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionPath {
    pub z: Vec<bool>,
    pub b: Vec<u64>,
}

/// `paths × horizon` matrix of simulated daily transactions, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionPaths {
    paths: usize,
    horizon: usize,
    b: Vec<u64>,
}

impl TransactionPaths {
    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let paths = rows.len();
        if paths == 0 {
            return Err(Error::EmptyInput("transaction paths".into()));
        }
        let horizon = rows[0].len();
        if rows.iter().any(|r| r.len() != horizon) {
            return Err(Error::Domain("transaction paths must share one horizon".into()));
        }
        Ok(Self {
            paths,
            horizon,
            b: rows.concat(),
        })
    }

    /// Every path equal to `row`.
    pub fn constant(row: &[u64], paths: usize) -> Result<Self> {
        Self::from_rows(vec![row.to_vec(); paths])
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.b[i * self.horizon..(i + 1) * self.horizon]
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.b[i * self.horizon + j]
    }

    pub fn path(&self, i: usize) -> TransactionPath {
        let b = self.row(i).to_vec();
        TransactionPath {
            z: b.iter().map(|&x| x > 0).collect(),
            b,
        }
    }

    /// Samples of day `j` across paths.
    pub fn column(&self, j: usize) -> Vec<u64> {
        (0..self.paths).map(|i| self.get(i, j)).collect()
    }
}

impl DcmmModel {
    pub fn new(binary: Dglm, count: Dglm) -> Result<Self> {
        if binary.spec().family() != Family::BinomialLogistic {
            return Err(Error::Config("DCMM binary component must be binomial-logistic".into()));
        }
        if count.spec().family() != Family::PoissonLoglinear {
            return Err(Error::Config("DCMM count component must be poisson-loglinear".into()));
        }
        let mut a = binary.spec().covariate_columns();
        let mut b = count.spec().covariate_columns();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(Error::Config(format!(
                "DCMM components read different covariates: {a:?} vs {b:?}"
            )));
        }
        Ok(Self { binary, count })
    }

    pub fn binary(&self) -> &Dglm {
        &self.binary
    }

    pub fn count(&self) -> &Dglm {
        &self.count
    }

    pub fn count_mut(&mut self) -> &mut Dglm {
        &mut self.count
    }

    pub fn binary_mut(&mut self) -> &mut Dglm {
        &mut self.binary
    }

    pub fn checkpoint(&self) -> DcmmCheckpoint {
        DcmmCheckpoint {
            binary: self.binary.checkpoint(),
            count: self.count.checkpoint(),
        }
    }

    pub fn restore(binary: DglmSpec, count: DglmSpec, checkpoint: DcmmCheckpoint) -> Result<Self> {
        Self::new(Dglm::restore(binary, checkpoint.binary)?, Dglm::restore(count, checkpoint.count)?)
    }

    /// One-step predictive of tomorrow's transactions.
    pub fn predictive(&self, cov: &Covariates) -> Result<DcmmPredictive> {
        let bin = self.binary.one_step(cov, 1)?;
        let cnt = self.count.one_step(cov, 0)?;
        Ok(DcmmPredictive {
            p_nonzero: bin.predictive.mean(),
            count: cnt.predictive,
        })
    }

    /// Consumes one day's transactions count `b`.
    pub fn filter_step(&mut self, b: u64, cov: &Covariates, rng: &mut RngStream) -> Result<FilterDiagnostics> {
        let bin = self.binary.one_step(cov, 1)?;
        let cnt = self.count.one_step(cov, 0)?;
        let pred = DcmmPredictive {
            p_nonzero: bin.predictive.mean(),
            count: cnt.predictive.clone(),
        };
        let upper = pred.cdf(b)?;
        let lower = if b == 0 { 0.0 } else { pred.cdf(b - 1)? };
        let diagnostics = FilterDiagnostics {
            log_score: pred.pmf(b)?.ln(),
            pit: lower + (upper - lower) * rng.uniform(),
            mean: pred.mean(),
            p_nonzero: pred.p_nonzero,
        };
        self.binary.update(bin, if b > 0 { 1.0 } else { 0.0 })?;
        if b > 0 {
            self.count.update(cnt, (b - 1) as f64)?;
        } else {
            self.count.update_missing(cnt);
        }
        Ok(diagnostics)
    }

    /// Simulates one joint trajectory of `k` days on copies of the
    /// components, each conditioning on its own simulated outcomes.
    pub fn simulate_path(&self, k: usize, future: &FutureCovariates, path: usize, rng: &mut RngStream) -> Result<Vec<u64>> {
        let mut binary = self.binary.clone();
        let mut count = self.count.clone();
        let mut out = Vec::with_capacity(k);
        for j in 0..k {
            let cov = future.for_path(path, j);
            let bin = binary.one_step(&cov, 1)?;
            let z = bin.predictive.sample(rng)?.as_f64();
            // Conditioning after the final day would be discarded.
            let last = j + 1 == k;
            if !last {
                binary.update(bin, z)?;
            }
            if z > 0.0 {
                let cnt = count.one_step(&cov, 0)?;
                let x = cnt.predictive.sample(rng)?.as_f64();
                if !last {
                    count.update(cnt, x)?;
                }
                out.push(1 + x as u64);
            } else {
                if !last {
                    count.skip()?;
                }
                out.push(0);
            }
        }
        Ok(out)
    }

    /// Draws `m` joint `k`-day transaction paths. Path `i` uses the
    /// substream `i` of `rng`, so results do not depend on thread count.
    pub fn forecast_transaction_paths(
        &self,
        k: usize,
        future: &FutureCovariates,
        m: usize,
        rng: &RngStream,
    ) -> Result<TransactionPaths> {
        if m == 0 {
            return Err(Error::Domain("path count must be positive".into()));
        }
        if k == 0 {
            return Err(Error::Domain("forecast horizon must be positive".into()));
        }
        future.check(k, m)?;
        let rows = (0..m)
            .into_par_iter()
            .map(|i| self.simulate_path(k, future, i, &mut rng.substream(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        TransactionPaths::from_rows(rows)
    }
}
