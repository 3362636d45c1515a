use super::*;
use crate::numerics::{beta_moments, gamma_moments};
use crate::numerics::RngStream;
use nalgebra::{DMatrix, DVector};

fn scalar_spec(family: Family, delta: f64) -> DglmSpec {
    DglmSpec::builder(family)
        .intercept("level", "level")
        .discount("level", delta)
        .build()
        .unwrap()
}

fn scalar(m: f64, c: f64) -> StateMoments {
    StateMoments::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, c)).unwrap()
}

#[test]
fn evolve_divides_by_discount() {
    let spec = scalar_spec(Family::PoissonLoglinear, 0.8);
    let prior = evolve(&scalar(0.3, 2.0), &spec).unwrap();
    assert!((prior.c[(0, 0)] - 2.5).abs() < 1e-15);
    assert_eq!(prior.m[0], 0.3);
}

#[test]
fn evolve_discounts_groups_independently() {
    let spec = DglmSpec::builder(Family::PoissonLoglinear)
        .intercept("a", "g1")
        .covariate("x", "g2")
        .discount("g1", 0.5)
        .discount("g2", 1.0)
        .build()
        .unwrap();
    let post = StateMoments::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
    let prior = evolve(&post, &spec).unwrap();
    assert_eq!(prior.c, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
}

#[test]
fn evolve_keeps_cross_group_covariance() {
    let spec = DglmSpec::builder(Family::PoissonLoglinear)
        .intercept("a", "g1")
        .covariate("x", "g2")
        .discount("g1", 0.5)
        .discount("g2", 0.9)
        .build()
        .unwrap();
    let post = StateMoments::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0])).unwrap();
    let prior = evolve(&post, &spec).unwrap();
    assert!((prior.c[(0, 1)] - 0.3).abs() < 1e-15);
    assert!((prior.c[(1, 1)] - 2.0 / 0.9).abs() < 1e-15);
}

#[test]
fn unit_discount_is_plain_propagation() {
    let spec = DglmSpec::builder(Family::PoissonLoglinear)
        .intercept("level", "level")
        .fourier("weekly", 7.0, 2, "seasonal")
        .discount("level", 1.0)
        .discount("seasonal", 1.0)
        .build()
        .unwrap();
    let n = spec.state_dim();
    let c = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 + i as f64 } else { 0.1 });
    let post = StateMoments::new(DVector::from_fn(n, |i, _| i as f64), c.clone()).unwrap();
    let prior = evolve(&post, &spec).unwrap();
    let g = spec.evolution_matrix();
    let expected = g * c * g.transpose();
    assert!((prior.c - expected).amax() < 1e-14);
}

#[test]
fn predictor_inflation() {
    let prior = scalar(0.0, 1.2);
    let f = DVector::from_element(1, 1.0);
    let (m, re) = predictor_moments(&prior, &f, 0.5).unwrap();
    assert!((m.q - 2.4).abs() < 1e-15);
    assert!((re.v - 1.2).abs() < 1e-15);
    let (m, re) = predictor_moments(&prior, &f, 1.0).unwrap();
    assert_eq!(m.q, 1.2);
    assert_eq!(re.v, 0.0);
}

#[test]
fn degenerate_prior_is_an_error() {
    let prior = scalar(0.0, 0.0);
    let f = DVector::from_element(1, 1.0);
    assert!(matches!(predictor_moments(&prior, &f, 1.0), Err(Error::DegeneratePrior(_))));
}

#[test]
fn scalar_update_returns_conjugate_posterior_moments() {
    let spec = scalar_spec(Family::PoissonLoglinear, 1.0);
    let params = ConjugateParams::new(3.0, 1.5).unwrap();
    let pm = gamma_moments(params);
    let prior = scalar(pm.f, pm.q);
    let f = DVector::from_element(1, 1.0);
    let (_, re) = predictor_moments(&prior, &f, 1.0).unwrap();
    let post = update(&prior, &f, 0.0, &spec, re, 0).unwrap();
    assert!((post.m[0] - (psi(3.0) - 2.5f64.ln())).abs() < 1e-8);
    assert!((post.c[(0, 0)] - psi1(3.0)).abs() < 1e-8);
}

#[test]
fn binomial_success_posterior_mean() {
    let spec = scalar_spec(Family::BinomialLogistic, 1.0);
    let params = ConjugateParams::new(2.0, 3.0).unwrap();
    let pm = beta_moments(params);
    let prior = scalar(pm.f, pm.q);
    let f = DVector::from_element(1, 1.0);
    let (_, re) = predictor_moments(&prior, &f, 1.0).unwrap();
    let post = update(&prior, &f, 1.0, &spec, re, 1).unwrap();
    assert!((post.m[0] - (psi(3.0) - psi(3.0))).abs() < 1e-8);
}

#[test]
fn zero_trials_is_missing() {
    let spec = scalar_spec(Family::BinomialLogistic, 1.0);
    let prior = scalar(0.2, 0.5);
    let f = DVector::from_element(1, 1.0);
    let (_, re) = predictor_moments(&prior, &f, 1.0).unwrap();
    assert_eq!(update(&prior, &f, 0.0, &spec, re, 0).unwrap(), prior);
}

#[test]
fn support_violations() {
    let spec = scalar_spec(Family::BinomialLogistic, 1.0);
    let prior = scalar(0.2, 0.5);
    let f = DVector::from_element(1, 1.0);
    let (_, re) = predictor_moments(&prior, &f, 1.0).unwrap();
    assert!(matches!(update(&prior, &f, 3.0, &spec, re, 2), Err(Error::Support { .. })));
    let spec = scalar_spec(Family::PoissonLoglinear, 1.0);
    assert!(matches!(update(&prior, &f, 1.5, &spec, re, 0), Err(Error::Support { .. })));
}

#[test]
fn symmetric_beta_bernoulli_is_fair() {
    let spec = scalar_spec(Family::BinomialLogistic, 1.0);
    let pm = beta_moments(ConjugateParams::new(4.0, 4.0).unwrap());
    let d = forecast_1step(pm, &spec, 1, None).unwrap();
    assert!((d.ln_pmf(1).unwrap().exp() - 0.5).abs() < 1e-9);
}

#[test]
fn poisson_predictive_mean() {
    let spec = scalar_spec(Family::PoissonLoglinear, 1.0);
    let pm = gamma_moments(ConjugateParams::new(3.0, 1.5).unwrap());
    let d = forecast_1step(pm, &spec, 0, None).unwrap();
    assert!((d.mean() - 2.0).abs() < 1e-7);
}

#[test]
fn missing_days_match_pure_evolution() {
    let spec = DglmSpec::builder(Family::PoissonLoglinear)
        .intercept("level", "level")
        .fourier("weekly", 7.0, 1, "seasonal")
        .discount("level", 0.95)
        .discount("seasonal", 0.98)
        .build()
        .unwrap();
    let init = StateMoments::new(DVector::from_vec(vec![1.0, 0.2, -0.1]), DMatrix::identity(3, 3) * 0.3).unwrap();
    let cov = Covariates::new();

    let mut a = Dglm::new(spec.clone(), init.clone()).unwrap();
    for _ in 0..10 {
        let step = a.one_step(&cov, 0).unwrap();
        a.update_missing(step);
    }
    let step = a.one_step(&cov, 0).unwrap();
    a.update(step, 4.0).unwrap();

    let mut state = init;
    for _ in 0..11 {
        state = evolve(&state, &spec).unwrap();
    }
    let f = spec.regression_vector(&cov).unwrap();
    let (_, re) = predictor_moments(&state, &f, 1.0).unwrap();
    let b = update(&state, &f, 4.0, &spec, re, 0).unwrap();
    assert!((&a.posterior().m - &b.m).amax() < 1e-12);
    assert!((&a.posterior().c - &b.c).amax() < 1e-12);
}

#[test]
fn smaller_discount_widens_prior() {
    let post = scalar(0.0, 0.7);
    let tight = evolve(&post, &scalar_spec(Family::PoissonLoglinear, 0.99)).unwrap();
    let loose = evolve(&post, &scalar_spec(Family::PoissonLoglinear, 0.9)).unwrap();
    assert!(loose.c[(0, 0)] > tight.c[(0, 0)]);
}

#[test]
fn normal_filter_matches_batch_regression() {
    let spec = DglmSpec::builder(Family::Normal)
        .intercept("level", "reg")
        .covariate("x", "reg")
        .discount("reg", 1.0)
        .volatility_discount(1.0)
        .build()
        .unwrap();
    let mut rng = RngStream::new(11, 0);
    let m0 = DVector::from_vec(vec![0.5, -0.2]);
    let c0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.5]);
    let (n0, s0) = (3.0, 0.8);
    let mut model = Dglm::normal(spec, StateMoments::new(m0.clone(), c0.clone()).unwrap(), VolatilityState::new(n0, s0).unwrap()).unwrap();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..60 {
        let x = 2.0 * rng.uniform() - 1.0;
        let y = 1.0 + 0.7 * x + (rng.uniform() - 0.5);
        let step = model.one_step(&Covariates::new().with("x", x), 0).unwrap();
        model.update(step, y).unwrap();
        xs.push(x);
        ys.push(y);
    }
    let x = DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    let y = DVector::from_vec(ys);
    let c0_star_inv = (c0 / s0).try_inverse().unwrap();
    let prec = &c0_star_inv + x.transpose() * &x;
    let v = prec.clone().try_inverse().unwrap();
    let mt = &v * (&c0_star_inv * &m0 + x.transpose() * &y);
    let nt = n0 + y.len() as f64;
    let ss = n0 * s0 + y.dot(&y) + m0.dot(&(&c0_star_inv * &m0)) - mt.dot(&(&prec * &mt));
    let st = ss / nt;
    let post = model.posterior();
    assert!((&post.m - &mt).amax() < 1e-9);
    assert!((&post.c - v * st).amax() < 1e-9);
    let vol = model.volatility().unwrap();
    assert!((vol.n - nt).abs() < 1e-12);
    assert!((vol.s - st).abs() < 1e-9);
}

#[test]
fn noninformative_observation_leaves_state() {
    let spec = DglmSpec::builder(Family::Normal)
        .intercept("level", "level")
        .discount("level", 1.0)
        .volatility_discount(1.0)
        .build()
        .unwrap();
    let init = scalar(2.0, 1e12);
    let (post, _, _) = dlm_step(&init, VolatilityState::known(1.0).unwrap(), &DVector::from_element(1, 1.0), 5.0, &spec).unwrap();
    // With a vague prior the observation dominates; with a vague observation the prior does.
    assert!((post.m[0] - 5.0).abs() < 1e-6);
    let sharp = scalar(2.0, 1.0);
    let (post, _, _) = dlm_step(&sharp, VolatilityState::known(1e12).unwrap(), &DVector::from_element(1, 1.0), 5.0, &spec).unwrap();
    assert!((post.m[0] - 2.0).abs() / 2.0 < 1e-6);
}

#[test]
fn constant_model_converges_to_sample_mean() {
    let spec = DglmSpec::builder(Family::Normal)
        .intercept("level", "level")
        .discount("level", 1.0)
        .volatility_discount(1.0)
        .build()
        .unwrap();
    let mut rng = RngStream::new(3, 1);
    let mut model = Dglm::normal(spec, scalar(0.0, 1e8), VolatilityState::new(1.0, 1.0).unwrap()).unwrap();
    let mut sum = 0.0;
    let n = 400;
    for _ in 0..n {
        let y = 3.0 + 2.0 * (rng.uniform() - 0.5);
        sum += y;
        let step = model.one_step(&Covariates::new(), 0).unwrap();
        model.update(step, y).unwrap();
    }
    assert!((model.posterior().m[0] - sum / n as f64).abs() < 1e-6);
}

#[test]
fn poisson_generator_recovery() {
    let spec = DglmSpec::builder(Family::PoissonLoglinear)
        .intercept("level", "reg")
        .covariate("x", "reg")
        .discount("reg", 1.0)
        .build()
        .unwrap();
    let truth = [1.2, -0.6];
    let mut rng = RngStream::new(5, 2);
    let mut model = Dglm::new(spec, StateMoments::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap()).unwrap();
    for _ in 0..500 {
        let x = 2.0 * rng.uniform() - 1.0;
        let mu = (truth[0] + truth[1] * x).exp();
        let y = Distribution::Poisson { mean: mu }.sample(&mut rng).unwrap().as_f64();
        let step = model.one_step(&Covariates::new().with("x", x), 0).unwrap();
        model.update(step, y).unwrap();
    }
    let post = model.posterior();
    for (i, t) in truth.iter().enumerate() {
        assert!((post.m[i] - t).abs() < 3.0 * post.c[(i, i)].sqrt(), "coord {i}: {} vs {t}", post.m[i]);
    }
    assert!(post.min_eigenvalue() > -1e-9 * post.c.trace());
}

#[test]
fn checkpoint_round_trip() {
    let spec = std::sync::Arc::new(scalar_spec(Family::PoissonLoglinear, 0.95));
    let mut model = Dglm::new(spec.clone(), scalar(0.123456789, 0.3)).unwrap();
    let step = model.one_step(&Covariates::new(), 0).unwrap();
    model.update(step, 3.0).unwrap();
    let json = serde_json::to_string(&model.checkpoint()).unwrap();
    let back: DglmCheckpoint = serde_json::from_str(&json).unwrap();
    let restored = Dglm::restore(spec, back).unwrap();
    assert_eq!(restored.posterior(), model.posterior());

    let other = scalar_spec(Family::PoissonLoglinear, 0.9);
    let back: DglmCheckpoint = serde_json::from_str(&json).unwrap();
    assert!(Dglm::restore(other, back).is_err());
}
