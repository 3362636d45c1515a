use nalgebra::{DMatrix, DVector};

use super::config::{CascadePriorRule, ExperimentConfig, ModelVariant};
use super::data::DailyItemRecord;
use crate::covariates::{Covariates, FACTOR, LOG_PRICE, PROMO};
use crate::dbcm::{CascadeModel, DayDecomposition};
use crate::dcmm::DcmmModel;
use crate::dglm::{reference_prior, Dglm, DglmSpec, Family, StateMoments};
use crate::error::{Error, Result};

pub const LEVEL: &str = "level";
pub const WEEKLY: &str = "weekly";

/// Transactions (or, for the benchmark, sales) model plus the cascade.
#[derive(Debug, Clone)]
pub struct ItemModels {
    pub dcmm: DcmmModel,
    pub cascade: Option<CascadeModel>,
}

/// DCMM component structure: level, log price, promotion, and either a
/// weekly Fourier block or the shared factor.
pub fn dcmm_component_spec(family: Family, config: &ExperimentConfig, multiscale: bool, rho: f64) -> Result<DglmSpec> {
    let delta = match family {
        Family::BinomialLogistic => config.discounts.bernoulli,
        _ => config.discounts.poisson,
    };
    let mut b = DglmSpec::builder(family)
        .intercept(LEVEL, LEVEL)
        .covariate(LOG_PRICE, "regression")
        .covariate(PROMO, "regression")
        .discount(LEVEL, delta)
        .discount("regression", delta)
        .rho(rho);
    b = if multiscale {
        b.covariate(FACTOR, "factor").discount("factor", delta)
    } else {
        b.fourier(WEEKLY, 7.0, config.weekly_harmonics, "seasonal").discount("seasonal", delta)
    };
    b.build()
}

/// Cascade level structure: level and a promotion effect.
pub fn cascade_level_spec(config: &ExperimentConfig) -> Result<DglmSpec> {
    DglmSpec::builder(Family::BinomialLogistic)
        .intercept(LEVEL, LEVEL)
        .covariate(PROMO, "promo")
        .discount(LEVEL, config.discounts.cascade_level)
        .discount("promo", config.discounts.cascade_promo)
        .build()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Share of active days, clipped to [1/(n+2), 1 − 1/(n+2)].
pub fn clipped_activity(counts: &[u64]) -> f64 {
    let n = counts.len() as f64;
    let p = counts.iter().filter(|&&b| b > 0).count() as f64 / n;
    p.clamp(1.0 / (n + 2.0), 1.0 - 1.0 / (n + 2.0))
}

/// Prior DCMM for a training window of daily counts with their covariates.
pub fn build_dcmm(counts: &[u64], covs: &[Covariates], config: &ExperimentConfig, rho: f64, multiscale: bool) -> Result<DcmmModel> {
    if counts.len() < config.training_days || counts.len() != covs.len() || counts.is_empty() {
        return Err(Error::Config(format!(
            "training slice has {} days, needs {}",
            counts.len(),
            config.training_days
        )));
    }
    let n = counts.len();
    let bin_spec = dcmm_component_spec(Family::BinomialLogistic, config, multiscale, config.binary_rho)?;
    let mut m = DVector::zeros(bin_spec.state_dim());
    let level = bin_spec.component_range(LEVEL).expect("level component").start;
    m[level] = logit(clipped_activity(counts));
    let dim = bin_spec.state_dim();
    let binary = Dglm::new(bin_spec, StateMoments::new(m, DMatrix::identity(dim, dim))?)?.with_solver(config.solver());

    let cnt_spec = dcmm_component_spec(Family::PoissonLoglinear, config, multiscale, rho)?;
    let mut obs = Vec::new();
    for (t, (&b, cov)) in counts.iter().zip(covs).enumerate() {
        if b > 0 {
            obs.push((t, cnt_spec.regression_vector(cov)?, (b as f64).ln()));
        }
    }
    let prior = if obs.is_empty() {
        let d = cnt_spec.state_dim();
        StateMoments::new(DVector::zeros(d), DMatrix::identity(d, d))?
    } else {
        reference_prior(&cnt_spec, &obs, n - 1, &[])?.0
    };
    let count = Dglm::new(cnt_spec, prior)?.with_solver(config.solver());
    DcmmModel::new(binary, count)
}

/// Prior cascade from the training window's decompositions.
pub fn build_cascade(days: &[DayDecomposition], config: &ExperimentConfig) -> Result<CascadeModel> {
    let d = config.depth;
    let mut sums = vec![0u64; d + 1];
    for day in days {
        if day.depth() != d {
            return Err(Error::InvalidDay(format!("day depth {} differs from configured {d}", day.depth())));
        }
        sums[0] += day.b;
        for r in 0..d {
            sums[r + 1] += day.n[r];
        }
    }
    let spec = cascade_level_spec(config)?;
    let dim = spec.state_dim();
    let level = spec.component_range(LEVEL).expect("level component").start;
    let mut levels = Vec::with_capacity(d);
    for r in 1..=d {
        let above = sums[r] as f64;
        let base = sums[r - 1] as f64;
        let p = match config.cascade_prior {
            CascadePriorRule::Exceedance => (above + 1.0) / (base + 2.0),
            CascadePriorRule::Exact => (base - above + 1.0) / (base + 2.0),
        };
        let mut m = DVector::zeros(dim);
        m[level] = logit(p);
        levels.push(Dglm::new(spec.clone(), StateMoments::new(m, DMatrix::identity(dim, dim) * 0.1)?)?.with_solver(config.solver()));
    }
    let mut cascade = CascadeModel::new(levels, config.excess_mode)?;
    if config.excess_mode == crate::dbcm::ExcessMode::Empirical {
        for day in days {
            for &s in &day.excess_baskets {
                cascade.store_mut().add(s);
            }
        }
    }
    Ok(cascade)
}

/// Covariates of a record, with the factor value when one is supplied.
pub fn record_covariates(rec: &DailyItemRecord, factor: Option<f64>) -> Covariates {
    let mut c = rec.covariates();
    if let Some(f) = factor {
        c.set(FACTOR, f);
    }
    c
}

/// Priors for one item and variant from its training window.
///
/// `factor` gives the aggregate model's factor estimate on each training
/// day and is required for the multi-scale variant.
pub fn build_model_spec(
    training: &[DailyItemRecord],
    factor: Option<&[f64]>,
    config: &ExperimentConfig,
    rho: f64,
    variant: ModelVariant,
) -> Result<ItemModels> {
    if training.len() < config.training_days {
        return Err(Error::Config(format!(
            "training slice has {} days, needs {}",
            training.len(),
            config.training_days
        )));
    }
    let multiscale = variant == ModelVariant::MultiscaleDbcm;
    if multiscale && factor.map_or(true, |f| f.len() < training.len()) {
        return Err(Error::Config("multi-scale priors need a factor value per training day".into()));
    }
    let covs: Vec<Covariates> = training
        .iter()
        .enumerate()
        .map(|(t, r)| record_covariates(r, if multiscale { factor.map(|f| f[t]) } else { None }))
        .collect();
    match variant {
        ModelVariant::Benchmark => {
            let y: Vec<u64> = training.iter().map(DailyItemRecord::sales).collect();
            Ok(ItemModels {
                dcmm: build_dcmm(&y, &covs, config, rho, false)?,
                cascade: None,
            })
        }
        ModelVariant::Dbcm | ModelVariant::MultiscaleDbcm => {
            let b: Vec<u64> = training.iter().map(DailyItemRecord::transactions).collect();
            let days: Vec<DayDecomposition> = training.iter().map(|r| r.decomposition.clone()).collect();
            Ok(ItemModels {
                dcmm: build_dcmm(&b, &covs, config, rho, multiscale)?,
                cascade: Some(build_cascade(&days, config)?),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbcm::decompose_day;

    #[test]
    fn activity_clipping() {
        assert!((clipped_activity(&[3; 21]) - 22.0 / 23.0).abs() < 1e-15);
        assert!((clipped_activity(&[0; 21]) - 1.0 / 23.0).abs() < 1e-15);
        assert!((clipped_activity(&[0, 1, 0, 1]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cascade_prior_smoothing() {
        let days: Vec<_> = (0..21).map(|_| decompose_day(&[1, 1, 1], 4).unwrap()).collect();
        let c = build_cascade(&days, &ExperimentConfig::default()).unwrap();
        let m = c.levels()[0].posterior().m[0];
        assert!((m - logit(1.0 / 65.0)).abs() < 1e-12);
        assert!((c.levels()[0].posterior().c[(1, 1)] - 0.1).abs() < 1e-15);
        let exact = ExperimentConfig {
            cascade_prior: CascadePriorRule::Exact,
            ..ExperimentConfig::default()
        };
        let c = build_cascade(&days, &exact).unwrap();
        assert!((c.levels()[0].posterior().m[0] - logit(64.0 / 65.0)).abs() < 1e-12);
    }

    #[test]
    fn weekly_block_is_a_seven_day_rotation() {
        let spec = dcmm_component_spec(Family::PoissonLoglinear, &ExperimentConfig::default(), false, 1.0).unwrap();
        let r = spec.coords_named(WEEKLY);
        assert_eq!(r.len(), 6);
        let g = spec.evolution_matrix();
        let mut p = DMatrix::<f64>::identity(spec.state_dim(), spec.state_dim());
        for _ in 0..7 {
            p = g * p;
        }
        for &i in &r {
            for &j in &r {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p[(i, j)] - e).abs() < 1e-12);
            }
        }
    }
}
