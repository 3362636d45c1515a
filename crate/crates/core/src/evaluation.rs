//! Forecast assessment: point forecasts, MAD, MAPE, HPD coverage and
//! randomized PIT.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Point forecast rule applied to Monte Carlo samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointRule {
    Median,
    Neg1Median,
    Mean,
}

/// Monte Carlo predictive samples of one future day and what happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub origin: usize,
    pub horizon: usize,
    pub samples: Vec<u64>,
    pub realized: u64,
}

/// The parts of a [`ForecastRecord`] the metrics need, so the samples can
/// be dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub origin: usize,
    pub horizon: usize,
    pub realized: u64,
    pub median: f64,
    pub neg1_median: Option<f64>,
    pub mean: f64,
    /// (nominal level, lower, upper) HPD intervals.
    pub intervals: Vec<(f64, u64, u64)>,
    pub pit: f64,
}

impl ScoredRecord {
    pub fn point(&self, rule: PointRule) -> Option<f64> {
        match rule {
            PointRule::Median => Some(self.median),
            PointRule::Neg1Median => self.neg1_median,
            PointRule::Mean => Some(self.mean),
        }
    }

    fn covered(&self, level: f64) -> Option<bool> {
        self.intervals
            .iter()
            .find(|(l, _, _)| (l - level).abs() < 1e-12)
            .map(|&(_, lo, hi)| lo <= self.realized && self.realized <= hi)
    }
}

impl ForecastRecord {
    pub fn new(origin: usize, horizon: usize, samples: Vec<u64>, realized: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("forecast samples".into()));
        }
        Ok(Self {
            origin,
            horizon,
            samples,
            realized,
        })
    }

    /// Empirical predictive cdf P(y) = #{samples ≤ y} / M.
    pub fn cdf(&self, y: u64) -> f64 {
        self.samples.iter().filter(|&&s| s <= y).count() as f64 / self.samples.len() as f64
    }

    pub fn score(&self, levels: &[f64], rng: &mut RngStream) -> Result<ScoredRecord> {
        let mut sorted = self.samples.clone();
        sorted.sort_unstable();
        let intervals = levels
            .iter()
            .map(|&l| hpd_sorted(&sorted, l).map(|(lo, hi)| (l, lo, hi)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoredRecord {
            origin: self.origin,
            horizon: self.horizon,
            realized: self.realized,
            median: median_sorted(&sorted),
            neg1_median: neg1_median_sorted(&sorted),
            mean: sorted.iter().map(|&s| s as f64).sum::<f64>() / sorted.len() as f64,
            intervals,
            pit: randomized_pit(self, rng),
        })
    }
}

fn median_sorted(s: &[u64]) -> f64 {
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        0.5 * (s[n / 2 - 1] as f64 + s[n / 2] as f64)
    }
}

fn neg1_median_sorted(s: &[u64]) -> Option<f64> {
    let total: f64 = s.iter().filter(|&&v| v > 0).map(|&v| 1.0 / v as f64).sum();
    if total == 0.0 {
        return None;
    }
    let mut acc = 0.0;
    for &v in s.iter().filter(|&&v| v > 0) {
        acc += 1.0 / v as f64;
        if acc >= 0.5 * total * (1.0 - 1e-12) {
            return Some(v as f64);
        }
    }
    s.last().map(|&v| v as f64)
}

/// Point forecast from samples under `rule`.
pub fn point_forecast(samples: &[u64], rule: PointRule) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("forecast samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    match rule {
        PointRule::Median => Ok(median_sorted(&sorted)),
        PointRule::Mean => Ok(sorted.iter().map(|&s| s as f64).sum::<f64>() / sorted.len() as f64),
        PointRule::Neg1Median => neg1_median_sorted(&sorted)
            .ok_or_else(|| Error::UndefinedMetric("(-1)-median needs a positive sample".into())),
    }
}

/// Shortest contiguous integer interval holding at least `level` of the
/// sample mass; ties go to the lowest interval.
pub fn hpd_interval(samples: &[u64], level: f64) -> Result<(u64, u64)> {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    hpd_sorted(&sorted, level)
}

fn hpd_sorted(sorted: &[u64], level: f64) -> Result<(u64, u64)> {
    if sorted.is_empty() {
        return Err(Error::EmptyInput("forecast samples".into()));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::Domain(format!("coverage level must lie in (0, 1], got {level}")));
    }
    let n = sorted.len();
    let need = ((level * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut best = (sorted[0], sorted[need - 1]);
    for i in 1..=(n - need) {
        let cand = (sorted[i], sorted[i + need - 1]);
        if cand.1 - cand.0 < best.1 - best.0 {
            best = cand;
        }
    }
    Ok(best)
}

/// Uniform draw on [P(y − 1), P(y)] with P(−1) = 0.
pub fn randomized_pit(record: &ForecastRecord, rng: &mut RngStream) -> f64 {
    let upper = record.cdf(record.realized);
    let lower = if record.realized == 0 { 0.0 } else { record.cdf(record.realized - 1) };
    lower + (upper - lower) * rng.uniform()
}

/// Per-horizon metric values of one model configuration. Index 0 is
/// horizon 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub metric: String,
    pub model: String,
    pub rho: Option<f64>,
    pub values: Vec<f64>,
    /// Records excluded per horizon (zero actuals for MAPE).
    pub excluded: Vec<usize>,
}

fn by_horizon(records: &[ScoredRecord]) -> Result<BTreeMap<usize, Vec<&ScoredRecord>>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("forecast records".into()));
    }
    let mut map: BTreeMap<usize, Vec<&ScoredRecord>> = BTreeMap::new();
    for r in records {
        if r.horizon == 0 {
            return Err(Error::Domain("horizons start at 1".into()));
        }
        map.entry(r.horizon).or_default().push(r);
    }
    let max = *map.keys().last().expect("non-empty");
    if map.len() != max {
        return Err(Error::UndefinedMetric("every horizon from 1 needs at least one record".into()));
    }
    Ok(map)
}

fn point_of(r: &ScoredRecord, rule: PointRule) -> Result<f64> {
    r.point(rule)
        .ok_or_else(|| Error::UndefinedMetric(format!("{rule:?} undefined at origin {} horizon {}", r.origin, r.horizon)))
}

/// Mean absolute deviation per horizon.
pub fn mad(records: &[ScoredRecord], rule: PointRule) -> Result<MetricTable> {
    let map = by_horizon(records)?;
    let mut values = Vec::with_capacity(map.len());
    for rs in map.values() {
        let mut total = 0.0;
        for r in rs {
            total += (r.realized as f64 - point_of(r, rule)?).abs();
        }
        values.push(total / rs.len() as f64);
    }
    Ok(MetricTable {
        metric: "mad".into(),
        model: String::new(),
        rho: None,
        excluded: vec![0; values.len()],
        values,
    })
}

/// Mean absolute percentage error per horizon, skipping zero actuals.
pub fn mape(records: &[ScoredRecord], rule: PointRule) -> Result<MetricTable> {
    let map = by_horizon(records)?;
    let mut values = Vec::with_capacity(map.len());
    let mut excluded = Vec::with_capacity(map.len());
    for (h, rs) in &map {
        let mut total = 0.0;
        let mut used = 0usize;
        for r in rs.iter().filter(|r| r.realized > 0) {
            let y = r.realized as f64;
            total += (y - point_of(r, rule)?).abs() / y;
            used += 1;
        }
        if used == 0 {
            return Err(Error::UndefinedMetric(format!("every actual at horizon {h} is zero")));
        }
        values.push(total / used as f64);
        excluded.push(rs.len() - used);
    }
    Ok(MetricTable {
        metric: "mape".into(),
        model: String::new(),
        rho: None,
        values,
        excluded,
    })
}

/// Empirical coverage of the HPD intervals at each scored level; one table
/// per level.
pub fn coverage(records: &[ScoredRecord], levels: &[f64]) -> Result<Vec<MetricTable>> {
    let map = by_horizon(records)?;
    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        let mut values = Vec::with_capacity(map.len());
        for rs in map.values() {
            let mut hit = 0usize;
            for r in rs {
                let c = r
                    .covered(level)
                    .ok_or_else(|| Error::UndefinedMetric(format!("records were not scored at level {level}")))?;
                hit += usize::from(c);
            }
            values.push(hit as f64 / rs.len() as f64);
        }
        out.push(MetricTable {
            metric: format!("coverage_{}", (level * 100.0).round() as u32),
            model: String::new(),
            rho: None,
            excluded: vec![0; values.len()],
            values,
        });
    }
    Ok(out)
}

/// Kolmogorov-Smirnov test against U(0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

pub fn ks_uniform(values: &[f64]) -> Result<KsResult> {
    if values.is_empty() {
        return Err(Error::EmptyInput("KS sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let x = x.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - x).max(x - i as f64 / n);
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_tail(lambda),
        n: v.len(),
    })
}

/// P(K > λ) for the Kolmogorov distribution.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Per-horizon minimum across tables of one metric and model.
pub fn best_over_rho(tables: &[MetricTable]) -> Result<MetricTable> {
    let first = tables.first().ok_or_else(|| Error::EmptyInput("metric tables".into()))?;
    let mut values = first.values.clone();
    for t in &tables[1..] {
        if t.values.len() != values.len() || t.metric != first.metric {
            return Err(Error::Domain("tables differ in metric or horizon count".into()));
        }
        for (v, w) in values.iter_mut().zip(&t.values) {
            *v = v.min(*w);
        }
    }
    Ok(MetricTable {
        metric: first.metric.clone(),
        model: first.model.clone(),
        rho: None,
        excluded: first.excluded.clone(),
        values,
    })
}

/// One row of the plot-ready long format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub model: String,
    pub rho: String,
    pub horizon: usize,
    pub metric: String,
    pub value: f64,
}

pub fn long_format(tables: &[MetricTable]) -> Vec<LongRow> {
    tables
        .iter()
        .flat_map(|t| {
            t.values.iter().enumerate().map(move |(i, &v)| LongRow {
                model: t.model.clone(),
                rho: t.rho.map_or_else(|| "best".to_string(), |r| format!("{r}")),
                horizon: i + 1,
                metric: t.metric.clone(),
                value: v,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(samples: Vec<u64>, realized: u64, horizon: usize) -> ScoredRecord {
        ForecastRecord::new(0, horizon, samples, realized)
            .unwrap()
            .score(&[0.5, 0.9, 1.0], &mut RngStream::new(0, 0))
            .unwrap()
    }

    #[test]
    fn neg1_median_hand_example() {
        assert_eq!(point_forecast(&[1, 2, 3], PointRule::Neg1Median).unwrap(), 1.0);
        assert!(matches!(point_forecast(&[0, 0], PointRule::Neg1Median), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn degenerate_samples_agree() {
        for rule in [PointRule::Median, PointRule::Neg1Median, PointRule::Mean] {
            assert_eq!(point_forecast(&[4, 4, 4], rule).unwrap(), 4.0);
        }
    }

    #[test]
    fn one_record_metrics() {
        let r = scored(vec![3; 10], 7, 1);
        assert_eq!(mad(&[r.clone()], PointRule::Median).unwrap().values, vec![4.0]);
        let r = scored(vec![4; 10], 5, 1);
        assert!((mape(&[r], PointRule::Median).unwrap().values[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn mape_skips_zero_actuals() {
        let recs = vec![scored(vec![4; 5], 5, 1), scored(vec![4; 5], 0, 1)];
        let t = mape(&recs, PointRule::Median).unwrap();
        assert_eq!(t.excluded, vec![1]);
        assert!(mape(&[scored(vec![1; 3], 0, 1)], PointRule::Median).is_err());
    }

    #[test]
    fn hpd_prefers_shortest_then_lowest() {
        assert_eq!(hpd_interval(&[1, 2, 2, 2, 9], 0.6).unwrap(), (2, 2));
        assert_eq!(hpd_interval(&[1, 2, 3, 4], 0.5).unwrap(), (1, 2));
        assert_eq!(hpd_interval(&[5, 1, 9], 1.0).unwrap(), (1, 9));
    }

    #[test]
    fn full_level_covers_everything() {
        let recs: Vec<_> = (0..20).map(|i| scored((0..50).collect(), i, 1)).collect();
        let cov = coverage(&recs, &[1.0]).unwrap();
        assert_eq!(cov[0].values, vec![1.0]);
    }

    #[test]
    fn pit_boundaries() {
        let mut rng = RngStream::new(1, 1);
        let r = ForecastRecord::new(0, 1, vec![5, 6, 7], 2).unwrap();
        assert_eq!(randomized_pit(&r, &mut rng), 0.0);
        let r = ForecastRecord::new(0, 1, vec![3, 3], 3).unwrap();
        let p = randomized_pit(&r, &mut rng);
        assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn ks_detects_non_uniform() {
        let uniform: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_uniform(&uniform).unwrap().p_value > 0.99);
        let skewed: Vec<f64> = uniform.iter().map(|u| u * u).collect();
        assert!(ks_uniform(&skewed).unwrap().p_value < 1e-6);
    }

    #[test]
    fn ks_tail_reference_value() {
        // Classical 5% critical value of the Kolmogorov distribution.
        assert!((kolmogorov_tail(1.358) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn best_is_cellwise_minimum() {
        let t = |v: Vec<f64>, r| MetricTable {
            metric: "mad".into(),
            model: "m".into(),
            rho: Some(r),
            excluded: vec![0; v.len()],
            values: v,
        };
        let best = best_over_rho(&[t(vec![1.0, 5.0], 0.2), t(vec![2.0, 3.0], 0.4)]).unwrap();
        assert_eq!(best.values, vec![1.0, 3.0]);
        assert_eq!(long_format(&[best])[1].rho, "best");
    }
}
