use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::data::TransactionRow;
use crate::error::{Error, Result};
use crate::numerics::{Distribution, RngStream};

/// Generating parameters of one synthetic item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ItemScenario {
    pub id: String,
    /// Baseline mean of transactions − 1 on active days.
    pub base_rate: f64,
    /// Log-odds of at least one transaction.
    pub active_logit: f64,
    /// Standard deviation of the daily random-walk step of the log rate.
    pub drift_sd: f64,
    /// Item-specific day-of-week effects on the log rate.
    pub weekly: Vec<f64>,
    /// Multiplier of the scenario's shared day-of-week effect.
    pub factor_loading: f64,
    pub base_price: f64,
    pub price_noise_sd: f64,
    pub price_elasticity: f64,
    pub promo_prob: f64,
    /// Fractional price cut on promotion days.
    pub promo_discount: f64,
    /// Additive promotion effect on the log rate.
    pub promo_effect: f64,
    /// Exceedance probabilities P(size > r | size > r − 1), r = 1..=depth.
    pub cascade: Vec<f64>,
    /// Additive promotion effect on every cascade logit.
    pub cascade_promo_effect: f64,
    /// Mean of the Poisson overshoot of excess baskets above depth + 1.
    pub excess_overshoot: f64,
}

impl Default for ItemScenario {
    fn default() -> Self {
        Self {
            id: "A".into(),
            base_rate: 20.9,
            active_logit: 8.0,
            drift_sd: 0.003,
            weekly: vec![0.12, -0.08, -0.12, -0.1, 0.0, 0.08, 0.1],
            factor_loading: 0.0,
            base_price: 1.0,
            price_noise_sd: 0.02,
            price_elasticity: -1.0,
            promo_prob: 0.1,
            promo_discount: 0.15,
            promo_effect: 0.2,
            cascade: vec![0.3, 0.35, 0.4, 0.35],
            cascade_promo_effect: 0.3,
            excess_overshoot: 1.0,
        }
    }
}

/// A synthetic data set: calendar, cascade depth, shared weekly signal and
/// items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub start: NaiveDate,
    pub days: usize,
    pub depth: usize,
    pub shared_weekly: Vec<f64>,
    pub items: Vec<ItemScenario>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::item_a_like(762)
    }
}

impl Scenario {
    /// One high-volume item that sells every day, mostly in single-unit
    /// baskets.
    pub fn item_a_like(days: usize) -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2015, 3, 1).expect("valid date"),
            days,
            depth: 4,
            shared_weekly: vec![0.0; 7],
            items: vec![ItemScenario::default()],
        }
    }

    /// `n` low-volume items whose day-of-week pattern is a common factor.
    pub fn shared_factor(n: usize, days: usize) -> Self {
        let items = (0..n)
            .map(|i| ItemScenario {
                id: format!("item{i:03}"),
                base_rate: 2.0 + 0.5 * i as f64,
                active_logit: 1.0,
                drift_sd: 0.002,
                weekly: vec![0.0; 7],
                factor_loading: 1.0,
                promo_prob: 0.05,
                ..ItemScenario::default()
            })
            .collect();
        Self {
            start: NaiveDate::from_ymd_opt(2016, 1, 4).expect("valid date"),
            days,
            depth: 4,
            shared_weekly: vec![0.45, -0.3, -0.45, -0.3, 0.0, 0.3, 0.3],
            items,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.days == 0 || self.items.is_empty() || self.depth == 0 {
            return Err(Error::Config("scenario needs days, items and a positive depth".into()));
        }
        if self.shared_weekly.len() != 7 {
            return Err(Error::Config("shared weekly effects need seven values".into()));
        }
        for it in &self.items {
            if it.weekly.len() != 7 || it.cascade.len() != self.depth {
                return Err(Error::Config(format!("item {} has malformed weekly or cascade parameters", it.id)));
            }
            if it.cascade.iter().any(|p| !(0.0..=1.0).contains(p)) || !(0.0..=1.0).contains(&it.promo_prob) {
                return Err(Error::Config(format!("item {} has probabilities outside [0, 1]", it.id)));
            }
            if !(it.base_rate >= 0.0) || !(it.base_price > 0.0) {
                return Err(Error::Config(format!("item {} needs a non-negative rate and positive price", it.id)));
            }
        }
        Ok(())
    }
}

/// True generating values of one item-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDay {
    pub item_id: String,
    pub date: NaiveDate,
    pub p_active: f64,
    pub rate: f64,
    pub shared_effect: f64,
    pub price: f64,
    pub promo: bool,
    pub cascade: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Simulates transaction rows from the full generative stack and logs the
/// true parameters. Each item draws from its own labelled substream.
pub fn generate_synthetic(scenario: &Scenario, rng: &RngStream) -> Result<(Vec<TransactionRow>, Vec<TruthDay>)> {
    scenario.validate()?;
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    let d = scenario.depth;
    for item in &scenario.items {
        let mut r = rng.labelled(&item.id);
        let mut drift = 0.0;
        for t in 0..scenario.days {
            let date = scenario.start + chrono::Days::new(t as u64);
            let dow = t % 7;
            if t > 0 && item.drift_sd > 0.0 {
                drift += item.drift_sd
                    * Distribution::Normal { mean: 0.0, variance: 1.0 }.sample(&mut r)?.as_f64();
            }
            let promo = r.uniform() < item.promo_prob;
            let noise = if item.price_noise_sd > 0.0 {
                Distribution::Normal {
                    mean: 0.0,
                    variance: item.price_noise_sd * item.price_noise_sd,
                }
                .sample(&mut r)?
                .as_f64()
            } else {
                0.0
            };
            let price = item.base_price * noise.exp() * if promo { 1.0 - item.promo_discount } else { 1.0 };
            let shared = scenario.shared_weekly[dow];
            let log_rate = item.base_rate.max(1e-300).ln()
                + drift
                + item.weekly[dow]
                + item.factor_loading * shared
                + item.price_elasticity * (price / item.base_price).ln()
                + if promo { item.promo_effect } else { 0.0 };
            let rate = if item.base_rate == 0.0 { 0.0 } else { log_rate.exp() };
            let p_active = sigmoid(item.active_logit);
            let cascade: Vec<f64> = item
                .cascade
                .iter()
                .map(|&p| match p {
                    p if p <= 0.0 || p >= 1.0 => p,
                    p => sigmoid(logit(p) + if promo { item.cascade_promo_effect } else { 0.0 }),
                })
                .collect();
            let active = r.uniform() < p_active;
            if active {
                let b = 1 + Distribution::Poisson { mean: rate }.sample(&mut r)?.as_f64() as u64;
                for _ in 0..b {
                    let mut size = 1u64;
                    for &p in &cascade {
                        if r.uniform() < p {
                            size += 1;
                        } else {
                            break;
                        }
                    }
                    if size > d as u64 {
                        size = d as u64 + 1 + Distribution::Poisson { mean: item.excess_overshoot }.sample(&mut r)?.as_f64() as u64;
                    }
                    rows.push(TransactionRow {
                        date,
                        item_id: item.id.clone(),
                        price,
                        promo,
                        units: size,
                    });
                }
            }
            truth.push(TruthDay {
                item_id: item.id.clone(),
                date,
                p_active,
                rate,
                shared_effect: shared,
                price,
                promo,
                cascade,
            });
        }
    }
    rows.sort_by(|a, b| (a.date, &a.item_id).cmp(&(b.date, &b.item_id)));
    Ok((rows, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::data::ingest;

    #[test]
    fn degenerate_scenario_is_single_unit_baskets() {
        let mut s = Scenario::item_a_like(30);
        s.items[0] = ItemScenario {
            base_rate: 0.0,
            active_logit: 50.0,
            drift_sd: 0.0,
            cascade: vec![0.0; 4],
            promo_prob: 0.0,
            price_noise_sd: 0.0,
            ..ItemScenario::default()
        };
        let (rows, _) = generate_synthetic(&s, &RngStream::new(1, 1)).unwrap();
        let ds = ingest(&rows, 4).unwrap();
        for rec in &ds.items["A"] {
            assert_eq!(rec.decomposition.b, 1);
            assert_eq!(rec.decomposition.y, 1);
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let s = Scenario::shared_factor(3, 40);
        let a = generate_synthetic(&s, &RngStream::new(7, 0)).unwrap();
        let b = generate_synthetic(&s, &RngStream::new(7, 0)).unwrap();
        assert_eq!(a, b);
    }
}
