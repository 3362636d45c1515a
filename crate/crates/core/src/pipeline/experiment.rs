use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, FutureCovariateMode, ModelVariant};
use super::data::{DailyItemRecord, Dataset};
use super::models::{build_model_spec, cascade_level_spec, dcmm_component_spec, record_covariates, ItemModels};
use crate::covariates::{Covariates, FutureCovariates, LOG_PRICE, PROMO};
use crate::dbcm::{CascadeCheckpoint, CascadeModel};
use crate::dcmm::{DcmmCheckpoint, DcmmModel};
use crate::dglm::Family;
use crate::error::{Error, Result};
use crate::evaluation::{
    best_over_rho, coverage, ks_uniform, mad, mape, ForecastRecord, MetricTable, PointRule, ScoredRecord,
};
use crate::multiscale::{bind_factor, AggregateCheckpoint, AggregateModel, FactorPaths};
use crate::numerics::RngStream;

/// Aggregate-model outputs consumed by multi-scale items: a factor estimate
/// for every day and simulated factor paths at every forecast origin.
#[derive(Debug, Clone)]
pub struct FactorTrack {
    pub means: Vec<f64>,
    pub paths: BTreeMap<usize, Arc<FactorPaths>>,
    pub model: AggregateModel,
}

/// Days whose close is a forecast origin.
pub fn forecast_origins(config: &ExperimentConfig, days: usize) -> Result<Vec<usize>> {
    let first = config.training_days + config.fit_days - 1;
    let origins: Vec<usize> = (0..config.forecast_days)
        .map(|i| first + i)
        .filter(|&t| t + config.horizon < days)
        .collect();
    if origins.is_empty() {
        return Err(Error::Config(format!(
            "{days} days of data leave no forecast origin after {} training and {} fit days with horizon {}",
            config.training_days, config.fit_days, config.horizon
        )));
    }
    Ok(origins)
}

/// Regressor values assumed for future days.
#[derive(Debug, Clone, Default)]
pub struct FutureCovariateTable {
    rows: HashMap<(String, NaiveDate), (f64, bool)>,
}

#[derive(Deserialize)]
struct FutureRow {
    date: NaiveDate,
    item_id: String,
    price: f64,
    promo: u8,
}

impl FutureCovariateTable {
    /// Reads `date,item_id,price,promo` rows.
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut rows = HashMap::new();
        for rec in rdr.deserialize::<FutureRow>() {
            let r = rec.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            if !(r.price > 0.0) {
                return Err(Error::Parse {
                    line: rows.len() as u64 + 2,
                    message: "price must be positive".into(),
                });
            }
            rows.insert((r.item_id, r.date), (r.price, r.promo != 0));
        }
        Ok(Self { rows })
    }

    fn get(&self, item: &str, date: NaiveDate) -> Option<(f64, bool)> {
        self.rows.get(&(item.to_string(), date)).copied()
    }
}

fn covariates_of(price: f64, promo: bool) -> Covariates {
    Covariates::new().with(LOG_PRICE, price.ln()).with(PROMO, if promo { 1.0 } else { 0.0 })
}

fn future_days(
    records: &[DailyItemRecord],
    origin: usize,
    config: &ExperimentConfig,
    table: Option<&FutureCovariateTable>,
) -> Vec<Covariates> {
    let base = &records[origin];
    (1..=config.horizon)
        .map(|j| match config.future_covariates {
            FutureCovariateMode::ForwardFill => base.covariates(),
            FutureCovariateMode::Realized => records
                .get(origin + j)
                .map_or_else(|| base.covariates(), DailyItemRecord::covariates),
            FutureCovariateMode::File => {
                let date = base.date + chrono::Days::new(j as u64);
                table
                    .and_then(|t| t.get(&base.item_id, date))
                    .map_or_else(|| base.covariates(), |(p, promo)| covariates_of(p, promo))
            }
        })
        .collect()
}

fn future_aggregate_prices(dataset: &Dataset, origin: usize, config: &ExperimentConfig) -> Vec<f64> {
    let prices = &dataset.aggregate.avg_price;
    (1..=config.horizon)
        .map(|j| match config.future_covariates {
            FutureCovariateMode::Realized => *prices.get(origin + j).unwrap_or(&prices[origin]),
            _ => prices[origin],
        })
        .collect()
}

/// Filters the aggregate model through the data and simulates factor paths
/// at each origin in `origins`.
pub fn run_aggregate(dataset: &Dataset, config: &ExperimentConfig, origins: &[usize], rng: &RngStream) -> Result<FactorTrack> {
    let n = config.training_days;
    if dataset.days < n {
        return Err(Error::Config("data shorter than the training window".into()));
    }
    let agg = &dataset.aggregate;
    let mut model = AggregateModel::from_training(&agg.totals[..n], &agg.avg_price[..n], &config.aggregate)?;
    let mut means = Vec::with_capacity(dataset.days);
    for t in 0..n {
        means.push(model.factor_mean_back(n - 1 - t)?);
    }
    let stream = rng.labelled("factor");
    let mut paths = BTreeMap::new();
    for t in n..dataset.days {
        model.update_aggregate(agg.totals[t], agg.avg_price[t])?;
        means.push(model.factor_mean());
        if origins.binary_search(&t).is_ok() {
            let prices = future_aggregate_prices(dataset, t, config);
            let fp = model.simulate_factor_paths(config.horizon, &prices, config.paths, &stream.substream(t as u64))?;
            paths.insert(t, Arc::new(fp));
        }
    }
    Ok(FactorTrack { means, paths, model })
}

/// Samples of one forecast origin.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginForecast {
    pub origin: usize,
    /// `samples[j]` holds the path values of horizon j + 1.
    pub samples: Vec<Vec<u64>>,
    /// Per-horizon no-excess flags per path; empty for the benchmark.
    pub no_excess: Vec<Vec<bool>>,
}

fn filter_day(models: &mut ItemModels, variant: ModelVariant, rec: &DailyItemRecord, factor: Option<f64>, rng: &mut RngStream) -> Result<()> {
    let cov = record_covariates(rec, factor);
    let count = if variant == ModelVariant::Benchmark { rec.sales() } else { rec.transactions() };
    models.dcmm.filter_step(count, &cov, rng)?;
    if let Some(c) = &mut models.cascade {
        c.filter_step(&rec.decomposition, &cov)?;
    }
    Ok(())
}

/// Draws the joint `horizon`-day forecast of an item's sales.
pub fn forecast_item(
    models: &ItemModels,
    future: FutureCovariates,
    factor: Option<Arc<FactorPaths>>,
    config: &ExperimentConfig,
    origin: usize,
    rng: &RngStream,
) -> Result<OriginForecast> {
    let m = config.paths;
    let k = config.horizon;
    let future = match factor {
        Some(f) => bind_factor(future, f, m)?,
        None => future,
    };
    let tx = models.dcmm.forecast_transaction_paths(k, &future, m, &rng.labelled("transactions"))?;
    match &models.cascade {
        None => Ok(OriginForecast {
            origin,
            samples: (0..k).map(|j| tx.column(j)).collect(),
            no_excess: Vec::new(),
        }),
        Some(c) => {
            let sales = c.forecast_sales_paths(&tx, &future, &rng.labelled("units"))?;
            Ok(OriginForecast {
                origin,
                samples: (0..k).map(|j| sales.column(j)).collect(),
                no_excess: (0..k).map(|j| (0..m).map(|i| sales.no_excess(i, j)).collect()).collect(),
            })
        }
    }
}

/// Everything one (item, variant, ρ) run produced.
#[derive(Debug, Clone)]
pub struct ItemRun {
    pub item: String,
    pub variant: ModelVariant,
    pub rho: f64,
    pub records: Vec<ScoredRecord>,
    /// (origin, per-horizon no-excess probability).
    pub no_excess: Vec<(usize, Vec<f64>)>,
    /// One-step filtering PIT values over the whole filtered span.
    pub filter_pit: Vec<f64>,
    pub forecasts: Vec<OriginForecast>,
}

fn run_stream(rng: &RngStream, item: &str, variant: ModelVariant, rho: f64) -> RngStream {
    rng.labelled(item).labelled(variant.label()).substream(rho.to_bits())
}

/// Filters one item through the data, forecasting at each origin.
#[allow(clippy::too_many_arguments)]
pub fn run_item(
    item: &str,
    records: &[DailyItemRecord],
    config: &ExperimentConfig,
    variant: ModelVariant,
    rho: f64,
    factor: Option<&FactorTrack>,
    origins: &[usize],
    future_table: Option<&FutureCovariateTable>,
    rng: &RngStream,
) -> Result<ItemRun> {
    let n = config.training_days;
    let multiscale = variant == ModelVariant::MultiscaleDbcm;
    let track = if multiscale {
        Some(factor.ok_or_else(|| Error::Config("multi-scale variant needs the aggregate factor".into()))?)
    } else {
        None
    };
    let mut models = build_model_spec(&records[..n], track.map(|f| &f.means[..]), config, rho, variant)?;
    let stream = run_stream(rng, item, variant, rho);
    let mut pit_rng = stream.labelled("pit");
    let mut scored = Vec::new();
    let mut no_excess = Vec::new();
    let mut forecasts = Vec::new();
    let mut filter_pit = Vec::new();
    let last = origins.last().copied().unwrap_or(records.len() - 1);
    for t in n..=last.min(records.len() - 1) {
        let cov = record_covariates(&records[t], track.map(|f| f.means[t]));
        let count = if variant == ModelVariant::Benchmark { records[t].sales() } else { records[t].transactions() };
        let diag = models.dcmm.filter_step(count, &cov, &mut pit_rng)?;
        filter_pit.push(diag.pit);
        if let Some(c) = &mut models.cascade {
            c.filter_step(&records[t].decomposition, &cov)?;
        }
        if origins.binary_search(&t).is_err() {
            continue;
        }
        let future = FutureCovariates::new(future_days(records, t, config, future_table));
        let fp = track.map(|f| {
            f.paths
                .get(&t)
                .cloned()
                .ok_or_else(|| Error::Config(format!("no factor paths at origin {t}")))
        });
        let fp = fp.transpose()?;
        let fc = forecast_item(&models, future, fp, config, t, &stream.substream(t as u64))?;
        for (j, samples) in fc.samples.iter().enumerate() {
            let target = t + j + 1;
            if target >= records.len() {
                break;
            }
            let rec = ForecastRecord::new(t, j + 1, samples.clone(), records[target].sales())?;
            scored.push(rec.score(&config.coverage_levels, &mut pit_rng)?);
        }
        if !fc.no_excess.is_empty() {
            let probs = fc
                .no_excess
                .iter()
                .map(|flags| flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
                .collect();
            no_excess.push((t, probs));
        }
        if config.write_samples {
            forecasts.push(fc);
        }
    }
    Ok(ItemRun {
        item: item.to_string(),
        variant,
        rho,
        records: scored,
        no_excess,
        filter_pit,
        forecasts,
    })
}

/// A metric table tagged with its item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemTable {
    pub item: String,
    pub table: MetricTable,
}

/// KS test of forecast PIT values at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    pub item: String,
    pub model: String,
    pub rho: f64,
    pub horizon: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Outcome of an item across all variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub item: String,
    pub status: String,
    pub error: Option<String>,
    pub records: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub runs: Vec<ItemRun>,
    pub tables: Vec<ItemTable>,
    pub best: Vec<ItemTable>,
    pub ks: Vec<KsRow>,
    pub manifest: Vec<ManifestEntry>,
    pub origins: Vec<usize>,
    pub start: NaiveDate,
}

fn tag(mut t: MetricTable, model: &str, rho: f64) -> MetricTable {
    t.model = model.to_string();
    t.rho = Some(rho);
    t
}

/// Metric tables of one run: MAD of the median, MAPE of the (−1)-median,
/// MAD of the mean, and HPD coverage at each configured level.
pub fn run_tables(run: &ItemRun, config: &ExperimentConfig) -> Result<Vec<MetricTable>> {
    let label = run.variant.label();
    let mut out = vec![
        tag(mad(&run.records, PointRule::Median)?, label, run.rho),
        tag(mape(&run.records, PointRule::Neg1Median)?, label, run.rho),
    ];
    let mut mean_mad = mad(&run.records, PointRule::Mean)?;
    mean_mad.metric = "mad_mean".into();
    out.push(tag(mean_mad, label, run.rho));
    for t in coverage(&run.records, &config.coverage_levels)? {
        out.push(tag(t, label, run.rho));
    }
    Ok(out)
}

fn run_ks(run: &ItemRun) -> Result<Vec<KsRow>> {
    let mut by_h: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in &run.records {
        by_h.entry(r.horizon).or_default().push(r.pit);
    }
    by_h.into_iter()
        .map(|(h, v)| {
            let ks = ks_uniform(&v)?;
            Ok(KsRow {
                item: run.item.clone(),
                model: run.variant.label().into(),
                rho: run.rho,
                horizon: h,
                statistic: ks.statistic,
                p_value: ks.p_value,
                n: ks.n,
            })
        })
        .collect()
}

fn item_runs(
    item: &str,
    records: &[DailyItemRecord],
    config: &ExperimentConfig,
    track: Option<&FactorTrack>,
    origins: &[usize],
    table: Option<&FutureCovariateTable>,
    rng: &RngStream,
) -> Result<Vec<ItemRun>> {
    let mut runs = Vec::new();
    for &variant in &config.models {
        for &rho in &config.rho_grid {
            runs.push(run_item(item, records, config, variant, rho, track, origins, table, rng)?);
        }
    }
    Ok(runs)
}

/// Rolling-origin experiment over every (item, variant, ρ). Items run in
/// parallel; a failing item is recorded in the manifest and skipped.
pub fn run_experiment(config: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentReport> {
    config.validate()?;
    let origins = forecast_origins(config, dataset.days)?;
    let rng = RngStream::new(config.seed, 0);
    let track = if config.uses_multiscale() {
        Some(run_aggregate(dataset, config, &origins, &rng)?)
    } else {
        None
    };
    let table = match (&config.future_covariates, &config.future_covariates_file) {
        (FutureCovariateMode::File, Some(p)) => Some(FutureCovariateTable::read(p)?),
        _ => None,
    };
    let items: Vec<(&String, &Vec<DailyItemRecord>)> = dataset
        .items
        .iter()
        .filter(|(id, _)| config.items.as_ref().map_or(true, |keep| keep.contains(id)))
        .collect();
    if items.is_empty() {
        return Err(Error::EmptyInput("no items selected".into()));
    }
    let results: Vec<(String, Result<(Vec<ItemRun>, Vec<MetricTable>, Vec<KsRow>)>)> = items
        .par_iter()
        .map(|(id, recs)| {
            let out = item_runs(id, recs, config, track.as_ref(), &origins, table.as_ref(), &rng).and_then(|runs| {
                let mut tables = Vec::new();
                let mut ks = Vec::new();
                for r in &runs {
                    tables.extend(run_tables(r, config)?);
                    ks.extend(run_ks(r)?);
                }
                Ok((runs, tables, ks))
            });
            (id.to_string(), out)
        })
        .collect();

    let mut report = ExperimentReport {
        runs: Vec::new(),
        tables: Vec::new(),
        best: Vec::new(),
        ks: Vec::new(),
        manifest: Vec::new(),
        origins,
        start: dataset.start,
    };
    for (item, res) in results {
        match res {
            Ok((runs, tables, ks)) => {
                report.manifest.push(ManifestEntry {
                    item: item.clone(),
                    status: "ok".into(),
                    error: None,
                    records: runs.iter().map(|r| r.records.len()).sum(),
                });
                for variant in &config.models {
                    for metric in ["mad", "mape", "mad_mean"] {
                        let group: Vec<MetricTable> = tables
                            .iter()
                            .filter(|t| t.metric == metric && t.model == variant.label())
                            .cloned()
                            .collect();
                        if !group.is_empty() {
                            report.best.push(ItemTable {
                                item: item.clone(),
                                table: best_over_rho(&group)?,
                            });
                        }
                    }
                }
                report.tables.extend(tables.into_iter().map(|table| ItemTable { item: item.clone(), table }));
                report.ks.extend(ks);
                report.runs.extend(runs);
            }
            Err(e) => {
                log::error!("item {item} failed: {e}");
                report.manifest.push(ManifestEntry {
                    item,
                    status: "failed".into(),
                    error: Some(e.to_string()),
                    records: 0,
                });
            }
        }
    }
    Ok(report)
}

fn rho_label(rho: Option<f64>) -> String {
    rho.map_or_else(|| "best".into(), |r| format!("{r}"))
}

/// SHA-256 of the configuration's TOML form.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let text = config.to_toml()?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

impl ExperimentReport {
    /// Writes metric tables, PIT tests, no-excess probabilities, optional
    /// samples, a JSON report and a JSON-lines manifest into `dir`.
    pub fn write(&self, dir: &Path, config: &ExperimentConfig) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
        w.write_record(["item", "model", "rho", "horizon", "metric", "value", "excluded"])?;
        for it in self.tables.iter().chain(&self.best) {
            let t = &it.table;
            for (i, v) in t.values.iter().enumerate() {
                w.write_record([
                    it.item.clone(),
                    t.model.clone(),
                    rho_label(t.rho),
                    (i + 1).to_string(),
                    t.metric.clone(),
                    format!("{v}"),
                    t.excluded[i].to_string(),
                ])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("pit_ks.csv"))?;
        for r in &self.ks {
            w.serialize(r)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("no_excess.csv"))?;
        w.write_record(["item", "model", "rho", "origin", "horizon", "prob_no_excess"])?;
        for run in &self.runs {
            for (origin, probs) in &run.no_excess {
                let date = self.start + chrono::Days::new(*origin as u64);
                for (j, p) in probs.iter().enumerate() {
                    w.write_record([
                        run.item.clone(),
                        run.variant.label().into(),
                        format!("{}", run.rho),
                        date.to_string(),
                        (j + 1).to_string(),
                        format!("{p}"),
                    ])?;
                }
            }
        }
        w.flush()?;

        if config.write_samples {
            let mut w = csv::Writer::from_path(dir.join("samples.csv"))?;
            w.write_record(["item", "model", "rho", "origin", "horizon", "path", "y", "no_excess"])?;
            for run in &self.runs {
                for fc in &run.forecasts {
                    write_forecast_samples(&mut w, &run.item, run.variant, run.rho, self.start, fc)?;
                }
            }
            w.flush()?;
        }

        let summary = serde_json::json!({
            "config": config,
            "origins": self.origins.len(),
            "first_origin": self.origins.first().map(|&o| (self.start + chrono::Days::new(o as u64)).to_string()),
            "best": self.best,
            "manifest": self.manifest,
        });
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&summary)?)?;

        let mut m = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.jsonl"))?);
        writeln!(
            m,
            "{}",
            serde_json::json!({"event": "config", "config_sha256": config_hash(config)?, "items": self.manifest.len(), "origins": self.origins.len()})
        )?;
        for e in &self.manifest {
            writeln!(m, "{}", serde_json::json!({"event": "item", "item": e.item, "status": e.status, "error": e.error, "records": e.records}))?;
        }
        let failed = self.manifest.iter().filter(|e| e.status != "ok").count();
        writeln!(
            m,
            "{}",
            serde_json::json!({"event": "summary", "ok": self.manifest.len() - failed, "failed": failed})
        )?;
        m.flush()?;
        Ok(())
    }
}

/// Appends long-format sample rows for one origin.
pub fn write_forecast_samples<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    item: &str,
    variant: ModelVariant,
    rho: f64,
    start: NaiveDate,
    fc: &OriginForecast,
) -> Result<()> {
    let date = (start + chrono::Days::new(fc.origin as u64)).to_string();
    for (j, samples) in fc.samples.iter().enumerate() {
        for (i, y) in samples.iter().enumerate() {
            let flag = fc.no_excess.get(j).map_or(String::new(), |f| u8::from(f[i]).to_string());
            w.write_record([
                item.to_string(),
                variant.label().to_string(),
                format!("{rho}"),
                date.clone(),
                (j + 1).to_string(),
                i.to_string(),
                y.to_string(),
                flag,
            ])?;
        }
    }
    Ok(())
}

/// Filtered state of one item model, with enough context to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemCheckpoint {
    pub item: String,
    pub variant: ModelVariant,
    pub rho: f64,
    pub last_date: NaiveDate,
    pub dcmm: DcmmCheckpoint,
    pub cascade: Option<CascadeCheckpoint>,
}

/// All filtered states at the end of a data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitCheckpoint {
    pub config_sha256: String,
    pub last_date: NaiveDate,
    pub aggregate: Option<AggregateCheckpoint>,
    pub items: Vec<ItemCheckpoint>,
}

/// Filters every (item, variant, ρ) through the whole data set.
pub fn fit_all(config: &ExperimentConfig, dataset: &Dataset) -> Result<(FitCheckpoint, Vec<ManifestEntry>)> {
    config.validate()?;
    let rng = RngStream::new(config.seed, 0);
    let track = if config.uses_multiscale() {
        Some(run_aggregate(dataset, config, &[], &rng)?)
    } else {
        None
    };
    let last = dataset.days - 1;
    let last_date = dataset.date(last);
    let selected: Vec<(&String, &Vec<DailyItemRecord>)> = dataset
        .items
        .iter()
        .filter(|(id, _)| config.items.as_ref().map_or(true, |keep| keep.contains(id)))
        .collect();
    let results: Vec<(String, Result<Vec<ItemCheckpoint>>)> = selected
        .par_iter()
        .map(|(id, recs)| {
            let out = (|| {
                let mut cks = Vec::new();
                for &variant in &config.models {
                    for &rho in &config.rho_grid {
                        let models = fit_item(recs, config, variant, rho, track.as_ref(), &run_stream(&rng, id, variant, rho))?;
                        cks.push(ItemCheckpoint {
                            item: id.to_string(),
                            variant,
                            rho,
                            last_date,
                            dcmm: models.dcmm.checkpoint(),
                            cascade: models.cascade.as_ref().map(CascadeModel::checkpoint),
                        });
                    }
                }
                Ok(cks)
            })();
            (id.to_string(), out)
        })
        .collect();
    let mut items = Vec::new();
    let mut manifest = Vec::new();
    for (id, r) in results {
        match r {
            Ok(c) => {
                manifest.push(ManifestEntry {
                    item: id,
                    status: "ok".into(),
                    error: None,
                    records: c.len(),
                });
                items.extend(c);
            }
            Err(e) => manifest.push(ManifestEntry {
                item: id,
                status: "failed".into(),
                error: Some(e.to_string()),
                records: 0,
            }),
        }
    }
    Ok((
        FitCheckpoint {
            config_sha256: config_hash(config)?,
            last_date,
            aggregate: track.map(|t| t.model.checkpoint()),
            items,
        },
        manifest,
    ))
}

/// Builds priors and filters one item model through all of `records`.
pub fn fit_item(
    records: &[DailyItemRecord],
    config: &ExperimentConfig,
    variant: ModelVariant,
    rho: f64,
    track: Option<&FactorTrack>,
    stream: &RngStream,
) -> Result<ItemModels> {
    let n = config.training_days;
    let multiscale = variant == ModelVariant::MultiscaleDbcm;
    let means = if multiscale {
        Some(&track.ok_or_else(|| Error::Config("multi-scale variant needs the aggregate factor".into()))?.means[..])
    } else {
        None
    };
    let mut models = build_model_spec(&records[..n], means, config, rho, variant)?;
    let mut pit_rng = stream.labelled("pit");
    for (t, rec) in records.iter().enumerate().skip(n) {
        filter_day(&mut models, variant, rec, means.map(|m| m[t]), &mut pit_rng)?;
    }
    Ok(models)
}

/// Rebuilds item models from a checkpoint.
pub fn restore_item(config: &ExperimentConfig, ck: &ItemCheckpoint) -> Result<ItemModels> {
    let multiscale = ck.variant == ModelVariant::MultiscaleDbcm;
    let bin = dcmm_component_spec(Family::BinomialLogistic, config, multiscale, config.binary_rho)?;
    let cnt = dcmm_component_spec(Family::PoissonLoglinear, config, multiscale, ck.rho)?;
    let dcmm = DcmmModel::restore(bin, cnt, ck.dcmm.clone())?;
    let cascade = match &ck.cascade {
        Some(c) => {
            let spec = cascade_level_spec(config)?;
            Some(CascadeModel::restore(vec![spec; c.levels.len()], c.clone())?)
        }
        None => None,
    };
    Ok(ItemModels { dcmm, cascade })
}

/// Forecast summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummaryRow {
    pub item: String,
    pub model: String,
    pub rho: f64,
    pub origin: NaiveDate,
    pub horizon: usize,
    pub mean: f64,
    pub median: f64,
    pub neg1_median: Option<f64>,
    pub lower_90: u64,
    pub upper_90: u64,
    pub prob_no_excess: Option<f64>,
}

/// Forecasts beyond the end of the data from fitted checkpoints.
pub fn forecast_from_checkpoint(
    config: &ExperimentConfig,
    dataset: &Dataset,
    fit: &FitCheckpoint,
) -> Result<Vec<(ItemCheckpoint, OriginForecast)>> {
    if fit.config_sha256 != config_hash(config)? {
        return Err(Error::Config("checkpoint was fitted under a different configuration".into()));
    }
    let last = dataset.days - 1;
    if dataset.date(last) != fit.last_date {
        return Err(Error::Config(format!("checkpoint ends on {}, data on {}", fit.last_date, dataset.date(last))));
    }
    let rng = RngStream::new(config.seed, 0);
    let factor = match &fit.aggregate {
        Some(a) => {
            let model = AggregateModel::restore(&config.aggregate, a.clone())?;
            let prices = vec![dataset.aggregate.avg_price[last]; config.horizon];
            Some(Arc::new(model.simulate_factor_paths(
                config.horizon,
                &prices,
                config.paths,
                &rng.labelled("factor").substream(last as u64),
            )?))
        }
        None => None,
    };
    let forward = ExperimentConfig {
        future_covariates: if config.future_covariates == FutureCovariateMode::File {
            FutureCovariateMode::File
        } else {
            FutureCovariateMode::ForwardFill
        },
        ..config.clone()
    };
    let table = match &config.future_covariates_file {
        Some(p) if config.future_covariates == FutureCovariateMode::File => Some(FutureCovariateTable::read(p)?),
        _ => None,
    };
    fit.items
        .par_iter()
        .map(|ck| {
            let recs = dataset
                .items
                .get(&ck.item)
                .ok_or_else(|| Error::Config(format!("item {} missing from data", ck.item)))?;
            let models = restore_item(config, ck)?;
            let future = FutureCovariates::new(future_days(recs, last, &forward, table.as_ref()));
            let f = if ck.variant == ModelVariant::MultiscaleDbcm { factor.clone() } else { None };
            if ck.variant == ModelVariant::MultiscaleDbcm && f.is_none() {
                return Err(Error::Config("multi-scale checkpoint without aggregate state".into()));
            }
            let fc = forecast_item(&models, future, f, config, last, &run_stream(&rng, &ck.item, ck.variant, ck.rho).substream(last as u64))?;
            Ok((ck.clone(), fc))
        })
        .collect()
}

/// Summaries of forecast samples per horizon.
pub fn summarize_forecast(ck: &ItemCheckpoint, start: NaiveDate, fc: &OriginForecast) -> Result<Vec<ForecastSummaryRow>> {
    fc.samples
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let (lo, hi) = crate::evaluation::hpd_interval(s, 0.9)?;
            Ok(ForecastSummaryRow {
                item: ck.item.clone(),
                model: ck.variant.label().into(),
                rho: ck.rho,
                origin: start + chrono::Days::new(fc.origin as u64),
                horizon: j + 1,
                mean: crate::evaluation::point_forecast(s, PointRule::Mean)?,
                median: crate::evaluation::point_forecast(s, PointRule::Median)?,
                neg1_median: crate::evaluation::point_forecast(s, PointRule::Neg1Median).ok(),
                lower_90: lo,
                upper_90: hi,
                prob_no_excess: fc
                    .no_excess
                    .get(j)
                    .map(|f| f.iter().filter(|&&x| x).count() as f64 / f.len() as f64),
            })
        })
        .collect()
}

/// One long-format sample row as written by forecasting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub item: String,
    pub model: String,
    pub rho: f64,
    pub origin: NaiveDate,
    pub horizon: usize,
    pub path: usize,
    pub y: u64,
    pub no_excess: Option<u8>,
}

/// Scores a long-format sample file against realized sales and returns
/// metric tables per (item, model, ρ).
pub fn evaluate_samples(samples: &[SampleRow], dataset: &Dataset, config: &ExperimentConfig) -> Result<Vec<ItemTable>> {
    let mut groups: BTreeMap<(String, String, String, NaiveDate, usize), Vec<u64>> = BTreeMap::new();
    for s in samples {
        groups
            .entry((s.item.clone(), s.model.clone(), format!("{}", s.rho), s.origin, s.horizon))
            .or_default()
            .push(s.y);
    }
    let mut scored: BTreeMap<(String, String, String), Vec<ScoredRecord>> = BTreeMap::new();
    let rng = RngStream::new(config.seed, 0).labelled("evaluate");
    for ((item, model, rho, origin, h), ys) in groups {
        let recs = dataset
            .items
            .get(&item)
            .ok_or_else(|| Error::Config(format!("item {item} missing from data")))?;
        let o = (origin - dataset.start).num_days();
        let target = o + h as i64;
        if o < 0 || target as usize >= recs.len() {
            continue;
        }
        let mut r = rng.labelled(&item).substream(target as u64 * 64 + h as u64);
        let rec = ForecastRecord::new(o as usize, h, ys, recs[target as usize].sales())?;
        scored.entry((item, model, rho)).or_default().push(rec.score(&config.coverage_levels, &mut r)?);
    }
    let mut out = Vec::new();
    for ((item, model, rho), recs) in scored {
        let rho_v: f64 = rho.parse().map_err(|_| Error::Config(format!("bad rho {rho}")))?;
        let mut tables = vec![mad(&recs, PointRule::Median)?, mape(&recs, PointRule::Neg1Median)?];
        tables.extend(coverage(&recs, &config.coverage_levels)?);
        for t in tables {
            out.push(ItemTable {
                item: item.clone(),
                table: tag(t, &model, rho_v),
            });
        }
    }
    Ok(out)
}
