//! Distribution descriptors used for predictive simulation.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand_distr::{Beta, Binomial, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use super::special::{lgamma, ln_beta, ln_choose};
use crate::error::{Error, Result};

/// Descriptor of a sampling or predictive distribution.
///
/// `Gamma` uses a rate parameter. `NegativeBinomial { r, p }` counts failures
/// before the `r`-th success with success probability `p`, so its mean is
/// `r (1 − p) / p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Distribution {
    Bernoulli { p: f64 },
    Binomial { trials: u64, p: f64 },
    Beta { alpha: f64, beta: f64 },
    Gamma { shape: f64, rate: f64 },
    Poisson { mean: f64 },
    NegativeBinomial { r: f64, p: f64 },
    BetaBernoulli { alpha: f64, beta: f64 },
    BetaBinomial { trials: u64, alpha: f64, beta: f64 },
    Normal { mean: f64, variance: f64 },
    StudentT { df: f64, location: f64, scale: f64 },
    DiscreteWeighted { values: Vec<u64>, weights: Vec<f64> },
}

/// One draw: integer-valued for count families, real otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Draw {
    Count(u64),
    Real(f64),
}

impl Draw {
    pub fn as_f64(self) -> f64 {
        match self {
            Draw::Count(k) => k as f64,
            Draw::Real(x) => x,
        }
    }

    /// The count value; real draws yield `None`.
    pub fn count(self) -> Option<u64> {
        match self {
            Draw::Count(k) => Some(k),
            Draw::Real(_) => None,
        }
    }
}

fn prob(p: f64) -> bool {
    p.is_finite() && (0.0..=1.0).contains(&p)
}

fn pos(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn domain(d: &Distribution) -> Error {
    Error::Domain(format!("parameters out of domain: {d:?}"))
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        use Distribution::*;
        let ok = match self {
            Bernoulli { p } | Binomial { p, .. } => prob(*p),
            Beta { alpha, beta } | BetaBernoulli { alpha, beta } | BetaBinomial { alpha, beta, .. } => {
                pos(*alpha) && pos(*beta)
            }
            Gamma { shape, rate } => pos(*shape) && pos(*rate),
            Poisson { mean } => mean.is_finite() && *mean >= 0.0,
            NegativeBinomial { r, p } => pos(*r) && p.is_finite() && *p > 0.0 && *p <= 1.0,
            Normal { mean, variance } => mean.is_finite() && variance.is_finite() && *variance >= 0.0,
            StudentT { df, location, scale } => {
                *df > 0.0 && !df.is_nan() && location.is_finite() && scale.is_finite() && *scale >= 0.0
            }
            DiscreteWeighted { values, weights } => {
                !values.is_empty()
                    && values.len() == weights.len()
                    && weights.iter().all(|w| w.is_finite() && *w >= 0.0)
                    && weights.iter().any(|w| *w > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(domain(self))
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(
            self,
            Distribution::Beta { .. }
                | Distribution::Gamma { .. }
                | Distribution::Normal { .. }
                | Distribution::StudentT { .. }
        )
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<Draw> {
        self.validate()?;
        use Distribution::*;
        let draw = match self {
            Bernoulli { p } => Draw::Count(u64::from(rng.uniform() < *p)),
            Binomial { trials, p } => Draw::Count(binomial(*trials, *p, rng)?),
            Beta { alpha, beta } => Draw::Real(beta_draw(*alpha, *beta, rng)?),
            Gamma { shape, rate } => Draw::Real(gamma_draw(*shape, *rate, rng)?),
            Poisson { mean } => Draw::Count(poisson(*mean, rng)?),
            NegativeBinomial { r, p } => {
                let lambda = if *p >= 1.0 { 0.0 } else { gamma_draw(*r, *p / (1.0 - *p), rng)? };
                Draw::Count(poisson(lambda, rng)?)
            }
            BetaBernoulli { alpha, beta } => Draw::Count(u64::from(rng.uniform() < alpha / (alpha + beta))),
            BetaBinomial { trials, alpha, beta } => {
                if *trials == 0 {
                    Draw::Count(0)
                } else {
                    let pi = beta_draw(*alpha, *beta, rng)?;
                    Draw::Count(binomial(*trials, pi, rng)?)
                }
            }
            Normal { mean, variance } => {
                let n = rand_distr::Normal::new(*mean, variance.sqrt()).map_err(|_| domain(self))?;
                Draw::Real(n.sample(rng))
            }
            StudentT { df, location, scale } => {
                let t = if df.is_infinite() {
                    rand_distr::Normal::new(0.0, 1.0).map_err(|_| domain(self))?.sample(rng)
                } else {
                    rand_distr::StudentT::new(*df).map_err(|_| domain(self))?.sample(rng)
                };
                Draw::Real(location + scale * t)
            }
            DiscreteWeighted { values, weights } => {
                let idx = WeightedIndex::new(weights).map_err(|_| domain(self))?;
                Draw::Count(values[idx.sample(rng)])
            }
        };
        Ok(draw)
    }

    pub fn mean(&self) -> f64 {
        use Distribution::*;
        match self {
            Bernoulli { p } => *p,
            Binomial { trials, p } => *trials as f64 * p,
            Beta { alpha, beta } | BetaBernoulli { alpha, beta } => alpha / (alpha + beta),
            BetaBinomial { trials, alpha, beta } => *trials as f64 * alpha / (alpha + beta),
            Gamma { shape, rate } => shape / rate,
            Poisson { mean } => *mean,
            NegativeBinomial { r, p } => r * (1.0 - p) / p,
            Normal { mean, .. } => *mean,
            StudentT { df, location, .. } => {
                if *df > 1.0 {
                    *location
                } else {
                    f64::NAN
                }
            }
            DiscreteWeighted { values, weights } => {
                let total: f64 = weights.iter().sum();
                values.iter().zip(weights).map(|(v, w)| *v as f64 * w).sum::<f64>() / total
            }
        }
    }

    pub fn variance(&self) -> f64 {
        use Distribution::*;
        match self {
            Bernoulli { p } => p * (1.0 - p),
            Binomial { trials, p } => *trials as f64 * p * (1.0 - p),
            Beta { alpha, beta } => {
                let s = alpha + beta;
                alpha * beta / (s * s * (s + 1.0))
            }
            BetaBernoulli { alpha, beta } => {
                let m = alpha / (alpha + beta);
                m * (1.0 - m)
            }
            BetaBinomial { trials, alpha, beta } => {
                let n = *trials as f64;
                let s = alpha + beta;
                n * alpha * beta * (s + n) / (s * s * (s + 1.0))
            }
            Gamma { shape, rate } => shape / (rate * rate),
            Poisson { mean } => *mean,
            NegativeBinomial { r, p } => r * (1.0 - p) / (p * p),
            Normal { variance, .. } => *variance,
            StudentT { df, scale, .. } => {
                if df.is_infinite() {
                    scale * scale
                } else if *df > 2.0 {
                    scale * scale * df / (df - 2.0)
                } else {
                    f64::INFINITY
                }
            }
            DiscreteWeighted { values, weights } => {
                let total: f64 = weights.iter().sum();
                let m = self.mean();
                values
                    .iter()
                    .zip(weights)
                    .map(|(v, w)| (*v as f64 - m).powi(2) * w)
                    .sum::<f64>()
                    / total
            }
        }
    }

    /// Log probability mass at `k` for discrete families.
    pub fn ln_pmf(&self, k: u64) -> Result<f64> {
        self.validate()?;
        use Distribution::*;
        let kf = k as f64;
        let lp = match self {
            Bernoulli { p } => match k {
                0 => (-p).ln_1p(),
                1 => p.ln(),
                _ => f64::NEG_INFINITY,
            },
            BetaBernoulli { alpha, beta } => match k {
                0 => (beta / (alpha + beta)).ln(),
                1 => (alpha / (alpha + beta)).ln(),
                _ => f64::NEG_INFINITY,
            },
            Binomial { trials, p } => {
                if k > *trials {
                    f64::NEG_INFINITY
                } else {
                    ln_choose(*trials, k) + xlogy(kf, *p) + xlogy((*trials - k) as f64, 1.0 - p)
                }
            }
            BetaBinomial { trials, alpha, beta } => {
                if k > *trials {
                    f64::NEG_INFINITY
                } else {
                    ln_choose(*trials, k) + ln_beta_ratio(*alpha, *beta, k, *trials - k)
                }
            }
            Poisson { mean } => {
                if *mean == 0.0 {
                    if k == 0 {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    kf * mean.ln() - mean - lgamma(kf + 1.0)
                }
            }
            NegativeBinomial { r, p } => {
                ln_rising(*r, k) - lgamma(kf + 1.0) + r * p.ln() + xlogy(kf, 1.0 - p)
            }
            DiscreteWeighted { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mass: f64 = values.iter().zip(weights).filter(|(v, _)| **v == k).map(|(_, w)| w).sum();
                (mass / total).ln()
            }
            _ => return Err(Error::Domain(format!("ln_pmf is undefined for continuous {self:?}"))),
        };
        Ok(lp)
    }

    /// P(X ≤ k) for discrete families, by direct summation.
    pub fn cdf(&self, k: u64) -> Result<f64> {
        let mut total = 0.0;
        for j in 0..=k {
            total += self.ln_pmf(j)?.exp();
        }
        Ok(total.min(1.0))
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// log Γ(r + k) − log Γ(r), summed directly when k is small so that huge `r`
/// keeps full precision.
fn ln_rising(r: f64, k: u64) -> f64 {
    if k <= 4096 {
        (0..k).map(|i| (r + i as f64).ln()).sum()
    } else {
        lgamma(r + k as f64) - lgamma(r)
    }
}

/// log B(α + k, β + n_minus_k) − log B(α, β).
fn ln_beta_ratio(alpha: f64, beta: f64, k: u64, n_minus_k: u64) -> f64 {
    let n = k + n_minus_k;
    if n <= 4096 {
        ln_rising(alpha, k) + ln_rising(beta, n_minus_k) - ln_rising(alpha + beta, n)
    } else {
        ln_beta(alpha + k as f64, beta + n_minus_k as f64) - ln_beta(alpha, beta)
    }
}

pub(crate) fn poisson(mean: f64, rng: &mut RngStream) -> Result<u64> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::Domain(format!("poisson({mean}): {e}")))?;
    Ok(d.sample(rng) as u64)
}

pub(crate) fn binomial(trials: u64, p: f64, rng: &mut RngStream) -> Result<u64> {
    if trials == 0 || p <= 0.0 {
        return Ok(0);
    }
    if p >= 1.0 {
        return Ok(trials);
    }
    let d = Binomial::new(trials, p).map_err(|e| Error::Domain(format!("binomial({trials}, {p}): {e}")))?;
    Ok(d.sample(rng))
}

pub(crate) fn gamma_draw(shape: f64, rate: f64, rng: &mut RngStream) -> Result<f64> {
    let d = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Domain(format!("gamma({shape}, {rate}): {e}")))?;
    Ok(d.sample(rng))
}

pub(crate) fn beta_draw(alpha: f64, beta: f64, rng: &mut RngStream) -> Result<f64> {
    let d = Beta::new(alpha, beta).map_err(|e| Error::Domain(format!("beta({alpha}, {beta}): {e}")))?;
    Ok(d.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(d: &Distribution, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = RngStream::new(seed, 0);
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let x = d.sample(&mut rng).unwrap().as_f64();
            s += x;
            s2 += x * x;
        }
        let m = s / n as f64;
        (m, s2 / n as f64 - m * m)
    }

    #[test]
    fn zero_trial_binomial() {
        let mut rng = RngStream::new(1, 1);
        let d = Distribution::Binomial { trials: 0, p: 0.3 };
        assert_eq!(d.sample(&mut rng).unwrap(), Draw::Count(0));
    }

    #[test]
    fn pmfs_sum_to_one() {
        let cases = [
            Distribution::BetaBinomial { trials: 7, alpha: 2.5, beta: 0.7 },
            Distribution::Binomial { trials: 9, p: 0.35 },
            Distribution::NegativeBinomial { r: 3.0, p: 0.6 },
            Distribution::Poisson { mean: 4.2 },
        ];
        for d in cases {
            let total: f64 = (0..400).map(|k| d.ln_pmf(k).unwrap().exp()).sum();
            assert!((total - 1.0).abs() < 1e-10, "{d:?}: {total}");
            let mean: f64 = (0..400).map(|k| k as f64 * d.ln_pmf(k).unwrap().exp()).sum();
            assert!((mean - d.mean()).abs() < 1e-9, "{d:?}");
        }
    }

    #[test]
    fn beta_binomial_with_huge_concentration_is_binomial() {
        let bb = Distribution::BetaBinomial { trials: 5, alpha: 3e12, beta: 7e12 };
        let b = Distribution::Binomial { trials: 5, p: 0.3 };
        for k in 0..=5 {
            assert!((bb.ln_pmf(k).unwrap() - b.ln_pmf(k).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_domain_rejected() {
        let mut rng = RngStream::new(0, 0);
        assert!(Distribution::Bernoulli { p: 1.5 }.sample(&mut rng).is_err());
        assert!(Distribution::Gamma { shape: -1.0, rate: 1.0 }.sample(&mut rng).is_err());
        assert!(Distribution::DiscreteWeighted { values: vec![], weights: vec![] }
            .sample(&mut rng)
            .is_err());
    }

    #[test]
    fn negative_binomial_mean_small_sample() {
        let d = Distribution::NegativeBinomial { r: 3.0, p: 1.5 / 2.5 };
        let (m, v) = moments(&d, 200_000, 11);
        let se = (d.variance() / 200_000.0).sqrt();
        assert!((m - 2.0).abs() < 4.0 * se);
        assert!((v - d.variance()).abs() / d.variance() < 0.05);
    }

    #[test]
    fn reproducible_draws() {
        let d = Distribution::StudentT { df: 5.0, location: 1.0, scale: 2.0 };
        let mut a = RngStream::new(3, 9);
        let mut b = RngStream::new(3, 9);
        for _ in 0..50 {
            assert_eq!(d.sample(&mut a).unwrap(), d.sample(&mut b).unwrap());
        }
    }
}
