use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::covariates::{Covariates, LOG_PRICE, PROMO};
use crate::dbcm::{decompose_day, DayDecomposition};
use crate::error::{Error, Result};

/// One purchase: `date,item_id,price,promo,units`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRow {
    pub date: NaiveDate,
    pub item_id: String,
    pub price: f64,
    #[serde(with = "flag")]
    pub promo: bool,
    pub units: u64,
}

mod flag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("promo must be 0 or 1, got {other}"))),
        }
    }
}

impl TransactionRow {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.units == 0 {
            return Err("units must be at least 1".into());
        }
        if !(self.price > 0.0) || !self.price.is_finite() {
            return Err(format!("price must be positive, got {}", self.price));
        }
        if self.item_id.is_empty() {
            return Err("empty item id".into());
        }
        Ok(())
    }
}

pub fn read_transactions(path: &Path) -> Result<Vec<TransactionRow>> {
    read_transactions_from(std::fs::File::open(path)?)
}

pub fn read_transactions_from<R: std::io::Read>(reader: R) -> Result<Vec<TransactionRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let expected = ["date", "item_id", "price", "promo", "units"];
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", expected.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<TransactionRow>() {
        let row = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        row.validate().map_err(|message| Error::Parse {
            line: rows.len() as u64 + 2,
            message,
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("transaction file has no rows".into()));
    }
    Ok(rows)
}

pub fn write_transactions(path: &Path, rows: &[TransactionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One item on one calendar day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyItemRecord {
    pub date: NaiveDate,
    pub item_id: String,
    pub decomposition: DayDecomposition,
    pub price: f64,
    pub log_price: f64,
    pub promo: bool,
}

impl DailyItemRecord {
    pub fn covariates(&self) -> Covariates {
        Covariates::new()
            .with(LOG_PRICE, self.log_price)
            .with(PROMO, if self.promo { 1.0 } else { 0.0 })
    }

    pub fn transactions(&self) -> u64 {
        self.decomposition.b
    }

    pub fn sales(&self) -> u64 {
        self.decomposition.y
    }
}

/// Daily totals across items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSeries {
    pub totals: Vec<u64>,
    pub avg_price: Vec<f64>,
}

/// Ingested data: every item has one record per calendar day in the range.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub start: NaiveDate,
    pub days: usize,
    pub items: BTreeMap<String, Vec<DailyItemRecord>>,
    pub aggregate: AggregateSeries,
}

impl Dataset {
    pub fn date(&self, t: usize) -> NaiveDate {
        self.start + chrono::Days::new(t as u64)
    }

    /// Keeps only the listed items; aggregate totals are unchanged.
    pub fn retain_items(&mut self, keep: &[String]) {
        self.items.retain(|k, _| keep.contains(k));
    }
}

#[derive(Default)]
struct DayAcc {
    sizes: Vec<u64>,
    revenue: f64,
    units: u64,
    promo: bool,
}

/// Builds per-item daily records over the full calendar range of `rows`.
///
/// The daily price is the unit-weighted mean price of the day's purchases,
/// carried forward over days without purchases (and back-filled before an
/// item's first purchase). Promotion is set if any purchase was flagged and
/// carried forward the same way. The aggregate price is the mean of the
/// item daily prices.
pub fn ingest(rows: &[TransactionRow], depth: usize) -> Result<Dataset> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no transactions".into()));
    }
    for (i, r) in rows.iter().enumerate() {
        r.validate().map_err(|message| Error::Parse {
            line: i as u64 + 2,
            message,
        })?;
    }
    let start = rows.iter().map(|r| r.date).min().expect("non-empty");
    let end = rows.iter().map(|r| r.date).max().expect("non-empty");
    let days = (end - start).num_days() as usize + 1;

    let mut acc: BTreeMap<&str, Vec<DayAcc>> = BTreeMap::new();
    for r in rows {
        let t = (r.date - start).num_days() as usize;
        let slot = &mut acc.entry(r.item_id.as_str()).or_insert_with(|| (0..days).map(|_| DayAcc::default()).collect())[t];
        slot.sizes.push(r.units);
        slot.revenue += r.price * r.units as f64;
        slot.units += r.units;
        slot.promo |= r.promo;
    }

    let mut items = BTreeMap::new();
    let mut totals = vec![0u64; days];
    let mut price_sum = vec![0.0; days];
    for (id, series) in acc {
        let first = series.iter().find(|d| d.units > 0).expect("item has a purchase");
        let mut price = first.revenue / first.units as f64;
        let mut promo = false;
        let mut records = Vec::with_capacity(days);
        for (t, day) in series.iter().enumerate() {
            if day.units > 0 {
                price = day.revenue / day.units as f64;
                promo = day.promo;
            }
            let decomposition = decompose_day(&day.sizes, depth)?;
            totals[t] += decomposition.b;
            price_sum[t] += price;
            records.push(DailyItemRecord {
                date: start + chrono::Days::new(t as u64),
                item_id: id.to_string(),
                decomposition,
                price,
                log_price: price.ln(),
                promo,
            });
        }
        items.insert(id.to_string(), records);
    }
    let n_items = items.len() as f64;
    Ok(Dataset {
        start,
        days,
        aggregate: AggregateSeries {
            totals,
            avg_price: price_sum.into_iter().map(|p| p / n_items).collect(),
        },
        items,
    })
}
