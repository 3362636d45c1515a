//! Dynamic generalized linear models: discount evolution, conjugate-moment
//! matching, linear Bayes updating, random effects, and the conditionally
//! normal DLM with Beta-Gamma stochastic volatility.

mod reference;
mod spec;
mod state;

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use spec::{harmonic_block, Component, ComponentKind, DglmSpec, DglmSpecBuilder, Family};
pub use reference::{reference_prior, FixedComponent};
pub use state::StateMoments;

use crate::covariates::Covariates;
use crate::error::{Error, Result};
use crate::numerics::special::{psi, psi1};
use crate::numerics::{
    solve_beta_with, solve_gamma_with, ConjugateParams, Distribution, PredictorMoments, SolverOptions,
};

/// Predictor variances at or below this are treated as a mis-specified prior.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Degrees of freedom `n` and point estimate `s` of the observation variance
/// in the normal DLM. `n = ∞` encodes a known variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolatilityState {
    pub n: f64,
    pub s: f64,
}

impl VolatilityState {
    pub fn new(n: f64, s: f64) -> Result<Self> {
        if !(n > 0.0) || !(s > 0.0) || !s.is_finite() {
            return Err(Error::Domain(format!("volatility needs n > 0 and finite s > 0, got n={n}, s={s}")));
        }
        Ok(Self { n, s })
    }

    pub fn known(variance: f64) -> Result<Self> {
        Self::new(f64::INFINITY, variance)
    }

    /// Evolution through the volatility discount: degrees of freedom shrink,
    /// the point estimate is unchanged.
    pub fn discounted(&self, beta: f64) -> Self {
        Self { n: beta * self.n, s: self.s }
    }
}

/// Per-day random effect bookkeeping: baseline predictor variance `q0` and
/// the random-effect variance `v = q0 (1 − ρ) / ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectContext {
    pub q0: f64,
    pub v: f64,
}

/// Discount evolution: a = G m, R = G C G′ with each discount group's
/// diagonal block divided by its discount factor.
pub fn evolve(posterior: &StateMoments, spec: &DglmSpec) -> Result<StateMoments> {
    let n = spec.state_dim();
    if posterior.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: posterior.dim(),
        });
    }
    let g = spec.evolution_matrix();
    let a = g * &posterior.m;
    let mut r = g * &posterior.c * g.transpose();
    let groups = spec.coord_group();
    let deltas = spec.coord_discount();
    for i in 0..n {
        for j in 0..n {
            if groups[i] == groups[j] && deltas[i] < 1.0 {
                r[(i, j)] /= deltas[i];
            }
        }
    }
    let mut prior = StateMoments { m: a, c: r };
    prior.symmetrize();
    Ok(prior)
}

fn baseline_moments(prior: &StateMoments, regression: &DVector<f64>) -> Result<(f64, f64)> {
    if regression.len() != prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.dim(),
            actual: regression.len(),
        });
    }
    let f = regression.dot(&prior.m);
    let q0 = (&prior.c * regression).dot(regression);
    Ok((f, q0))
}

/// Prior mean and random-effect-inflated variance of the linear predictor.
pub fn predictor_moments(
    prior: &StateMoments,
    regression: &DVector<f64>,
    rho: f64,
) -> Result<(PredictorMoments, RandomEffectContext)> {
    let (f, q0) = baseline_moments(prior, regression)?;
    if !(q0 > DEGENERATE_VARIANCE) {
        return Err(Error::DegeneratePrior(q0));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Domain(format!("random-effects discount must lie in (0, 1], got {rho}")));
    }
    let q = q0 / rho;
    let v = q0 * (1.0 - rho) / rho;
    Ok((PredictorMoments { f, q }, RandomEffectContext { q0, v }))
}

/// Conjugate (α, β) matching the predictor moments; `None` for the normal family.
pub fn conjugate_prior(
    moments: PredictorMoments,
    family: Family,
    solver: SolverOptions,
) -> Result<Option<ConjugateParams>> {
    match family {
        Family::BinomialLogistic => solve_beta_with(moments, solver).map(Some),
        Family::PoissonLoglinear => solve_gamma_with(moments, solver).map(Some),
        Family::Normal => Ok(None),
    }
}

/// One-step predictive distribution.
///
/// Binomial: Beta-Binomial(h, α, β). Poisson: NegBin(α, β/(1+β)). Normal:
/// Student-t with `n` degrees of freedom, location `f` and scale √(q + s).
pub fn forecast_1step(
    moments: PredictorMoments,
    spec: &DglmSpec,
    trials: u64,
    volatility: Option<VolatilityState>,
) -> Result<Distribution> {
    predictive_from(moments, spec.family(), trials, volatility, SolverOptions::default()).map(|(d, _)| d)
}

fn predictive_from(
    moments: PredictorMoments,
    family: Family,
    trials: u64,
    volatility: Option<VolatilityState>,
    solver: SolverOptions,
) -> Result<(Distribution, Option<ConjugateParams>)> {
    match family {
        Family::BinomialLogistic => {
            let p = solve_beta_with(moments, solver)?;
            let d = if trials == 1 {
                Distribution::BetaBernoulli {
                    alpha: p.alpha,
                    beta: p.beta,
                }
            } else {
                Distribution::BetaBinomial {
                    trials,
                    alpha: p.alpha,
                    beta: p.beta,
                }
            };
            Ok((d, Some(p)))
        }
        Family::PoissonLoglinear => {
            let p = solve_gamma_with(moments, solver)?;
            Ok((
                Distribution::NegativeBinomial {
                    r: p.alpha,
                    p: p.beta / (1.0 + p.beta),
                },
                Some(p),
            ))
        }
        Family::Normal => {
            let vol = volatility.ok_or_else(|| Error::Domain("normal family requires a volatility state".into()))?;
            Ok((
                Distribution::StudentT {
                    df: vol.n,
                    location: moments.f,
                    scale: (moments.q + vol.s).sqrt(),
                },
                None,
            ))
        }
    }
}

fn check_support(family: Family, y: f64, trials: u64) -> Result<()> {
    let integer = y.is_finite() && y >= 0.0 && y.fract() == 0.0;
    let fail = |reason: &str| {
        Err(Error::Support {
            observed: y,
            reason: reason.to_string(),
        })
    };
    match family {
        Family::BinomialLogistic if !integer || y > trials as f64 => fail("binomial needs an integer in 0..=trials"),
        Family::PoissonLoglinear if !integer => fail("poisson needs a non-negative integer"),
        Family::Normal if !y.is_finite() => fail("normal needs a finite value"),
        _ => Ok(()),
    }
}

/// Posterior mean and variance (g, p) of the linear predictor after
/// observing `y` under the conjugate prior.
pub fn posterior_predictor(family: Family, params: ConjugateParams, y: f64, trials: u64) -> (f64, f64) {
    match family {
        Family::BinomialLogistic => {
            let a = params.alpha + y;
            let b = params.beta + trials as f64 - y;
            (psi(a) - psi(b), psi1(a) + psi1(b))
        }
        _ => {
            let a = params.alpha + y;
            (psi(a) - (params.beta + 1.0).ln(), psi1(a))
        }
    }
}

/// Linear Bayes update of a conjugate-family DGLM.
///
/// The random effect is integrated out: the baseline state is updated with
/// the inflated predictor variance q = q0/ρ.
pub fn update(
    prior: &StateMoments,
    regression: &DVector<f64>,
    y: f64,
    spec: &DglmSpec,
    re: RandomEffectContext,
    trials: u64,
) -> Result<StateMoments> {
    if spec.family() == Family::Normal {
        return Err(Error::Domain("use dlm_step for the normal family".into()));
    }
    check_support(spec.family(), y, trials)?;
    if spec.family() == Family::BinomialLogistic && trials == 0 {
        return Ok(update_missing(prior));
    }
    let f = regression.dot(&prior.m);
    let moments = PredictorMoments { f, q: re.q0 + re.v };
    let params = conjugate_prior(moments, spec.family(), SolverOptions::default())?.expect("conjugate family");
    Ok(linear_bayes(prior, regression, moments, params, y, spec.family(), trials))
}

fn linear_bayes(
    prior: &StateMoments,
    regression: &DVector<f64>,
    moments: PredictorMoments,
    params: ConjugateParams,
    y: f64,
    family: Family,
    trials: u64,
) -> StateMoments {
    let (g, p) = posterior_predictor(family, params, y, trials);
    let q = moments.q;
    let rf = &prior.c * regression;
    let m = &prior.m + &rf * ((g - moments.f) / q);
    let c = &prior.c - (&rf * rf.transpose()) * ((1.0 - p / q) / q);
    let mut post = StateMoments { m, c };
    post.symmetrize();
    post
}

/// No observation: the posterior is the prior.
pub fn update_missing(prior: &StateMoments) -> StateMoments {
    prior.clone()
}

/// One evolve/forecast/update cycle of the normal DLM with Beta-Gamma
/// volatility. Covariances are on the scale of the current variance
/// estimate `s`.
pub fn dlm_step(
    posterior: &StateMoments,
    volatility: VolatilityState,
    regression: &DVector<f64>,
    y: f64,
    spec: &DglmSpec,
) -> Result<(StateMoments, VolatilityState, Distribution)> {
    let prior = evolve(posterior, spec)?;
    let (f, q0) = baseline_moments(&prior, regression)?;
    let moments = PredictorMoments { f, q: q0 / spec.rho() };
    let vol_prior = volatility.discounted(spec.volatility_discount());
    let (predictive, _) = predictive_from(moments, Family::Normal, 0, Some(vol_prior), SolverOptions::default())?;
    check_support(Family::Normal, y, 0)?;
    let (post, vol) = normal_update(&prior, regression, moments, vol_prior, y);
    Ok((post, vol, predictive))
}

fn normal_update(
    prior: &StateMoments,
    regression: &DVector<f64>,
    moments: PredictorMoments,
    vol_prior: VolatilityState,
    y: f64,
) -> (StateMoments, VolatilityState) {
    let total = moments.q + vol_prior.s;
    let e = y - moments.f;
    let n = vol_prior.n + 1.0;
    let s = vol_prior.s + (vol_prior.s / n) * (e * e / total - 1.0);
    let rf = &prior.c * regression;
    let m = &prior.m + &rf * (e / total);
    let c = (&prior.c - (&rf * rf.transpose()) / total) * (s / vol_prior.s);
    let mut post = StateMoments { m, c };
    post.symmetrize();
    (post, VolatilityState { n, s })
}

/// Everything computed on the way to a one-step forecast; reused by the
/// subsequent update so the conjugate solve runs once per day.
#[derive(Debug, Clone)]
pub struct OneStep {
    pub prior: StateMoments,
    pub regression: DVector<f64>,
    pub moments: PredictorMoments,
    pub random_effect: RandomEffectContext,
    pub conjugate: Option<ConjugateParams>,
    pub volatility: Option<VolatilityState>,
    pub trials: u64,
    pub predictive: Distribution,
}

/// A DGLM instance: a spec plus its current filtered state.
#[derive(Debug, Clone)]
pub struct Dglm {
    spec: Arc<DglmSpec>,
    state: StateMoments,
    volatility: Option<VolatilityState>,
    solver: SolverOptions,
}

/// Serializable snapshot of a filtered DGLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DglmCheckpoint {
    pub spec_hash: String,
    pub state: StateMoments,
    pub volatility: Option<VolatilityState>,
}

impl Dglm {
    pub fn new(spec: impl Into<Arc<DglmSpec>>, initial: StateMoments) -> Result<Self> {
        let spec = spec.into();
        if initial.dim() != spec.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.state_dim(),
                actual: initial.dim(),
            });
        }
        if spec.family() == Family::Normal {
            return Err(Error::Domain("normal family models need Dglm::normal".into()));
        }
        Ok(Self {
            spec,
            state: initial,
            volatility: None,
            solver: SolverOptions::default(),
        })
    }

    pub fn normal(spec: impl Into<Arc<DglmSpec>>, initial: StateMoments, volatility: VolatilityState) -> Result<Self> {
        let spec = spec.into();
        if spec.family() != Family::Normal {
            return Err(Error::Domain("Dglm::normal requires the normal family".into()));
        }
        if initial.dim() != spec.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.state_dim(),
                actual: initial.dim(),
            });
        }
        Ok(Self {
            spec,
            state: initial,
            volatility: Some(volatility),
            solver: SolverOptions::default(),
        })
    }

    pub fn with_solver(mut self, solver: SolverOptions) -> Self {
        self.solver = solver;
        self
    }

    pub fn spec(&self) -> &DglmSpec {
        &self.spec
    }

    pub fn shared_spec(&self) -> Arc<DglmSpec> {
        Arc::clone(&self.spec)
    }

    pub fn posterior(&self) -> &StateMoments {
        &self.state
    }

    pub fn posterior_mut(&mut self) -> &mut StateMoments {
        &mut self.state
    }

    pub fn volatility(&self) -> Option<VolatilityState> {
        self.volatility
    }

    pub fn one_step(&self, cov: &Covariates, trials: u64) -> Result<OneStep> {
        let regression = self.spec.regression_vector(cov)?;
        self.one_step_with(regression, trials)
    }

    pub fn one_step_with(&self, regression: DVector<f64>, trials: u64) -> Result<OneStep> {
        let prior = evolve(&self.state, &self.spec)?;
        let family = self.spec.family();
        let (moments, random_effect, volatility) = if family == Family::Normal {
            let (f, q0) = baseline_moments(&prior, &regression)?;
            let rho = self.spec.rho();
            let vol = self.volatility.map(|v| v.discounted(self.spec.volatility_discount()));
            (
                PredictorMoments { f, q: q0 / rho },
                RandomEffectContext {
                    q0,
                    v: q0 * (1.0 - rho) / rho,
                },
                vol,
            )
        } else {
            let (m, re) = predictor_moments(&prior, &regression, self.spec.rho())?;
            (m, re, None)
        };
        let (predictive, conjugate) = predictive_from(moments, family, trials, volatility, self.solver)?;
        Ok(OneStep {
            prior,
            regression,
            moments,
            random_effect,
            conjugate,
            volatility,
            trials,
            predictive,
        })
    }

    /// Updates with observation `y` on the day described by `step`.
    pub fn update(&mut self, step: OneStep, y: f64) -> Result<()> {
        let family = self.spec.family();
        check_support(family, y, step.trials)?;
        match family {
            Family::Normal => {
                let vol = step.volatility.expect("normal one-step carries volatility");
                let (post, vol) = normal_update(&step.prior, &step.regression, step.moments, vol, y);
                self.state = post;
                self.volatility = Some(vol);
            }
            Family::BinomialLogistic if step.trials == 0 => self.state = step.prior,
            _ => {
                let params = step.conjugate.expect("conjugate family carries parameters");
                self.state = linear_bayes(&step.prior, &step.regression, step.moments, params, y, family, step.trials);
            }
        }
        Ok(())
    }

    /// No observation on this day: the posterior is the evolved prior.
    pub fn update_missing(&mut self, step: OneStep) {
        self.state = update_missing(&step.prior);
        if let Some(v) = step.volatility {
            self.volatility = Some(v);
        }
    }

    /// Evolves one day without observing anything.
    pub fn skip(&mut self) -> Result<()> {
        self.state = evolve(&self.state, &self.spec)?;
        if let Some(v) = self.volatility {
            self.volatility = Some(v.discounted(self.spec.volatility_discount()));
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> DglmCheckpoint {
        DglmCheckpoint {
            spec_hash: self.spec.spec_hash(),
            state: self.state.clone(),
            volatility: self.volatility,
        }
    }

    pub fn restore(spec: impl Into<Arc<DglmSpec>>, checkpoint: DglmCheckpoint) -> Result<Self> {
        let spec = spec.into();
        if spec.spec_hash() != checkpoint.spec_hash {
            return Err(Error::Config("checkpoint was written for a different model spec".into()));
        }
        match checkpoint.volatility {
            Some(v) => Self::normal(spec, checkpoint.state, v),
            None => Self::new(spec, checkpoint.state),
        }
    }
}

#[cfg(test)]
mod tests;
