use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use txsales::numerics::RngStream;
use txsales::pipeline::{
    evaluate_samples, fit_all, forecast_from_checkpoint, generate_synthetic, ingest, read_transactions,
    run_experiment, summarize_forecast, write_forecast_samples, write_transactions, ExperimentConfig, FitCheckpoint,
    SampleRow, Scenario,
};
use txsales::{Error, Result};

#[derive(Parser)]
#[command(name = "txsales", version, about = "Transaction-level Bayesian sales forecasting")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo paths per forecast.
    #[arg(long, global = true)]
    paths: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Comma-separated item ids to keep.
    #[arg(long, global = true, value_delimiter = ',')]
    items: Option<Vec<String>>,
    #[arg(long, global = true, default_value = "out")]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioKind {
    ItemALike,
    SharedFactor,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate transaction rows and the true generating parameters.
    SimulateData {
        #[arg(long, value_enum, default_value = "item-a-like")]
        scenario: ScenarioKind,
        /// Scenario TOML file; overrides --scenario.
        #[arg(long)]
        scenario_file: Option<PathBuf>,
        #[arg(long, default_value_t = 762)]
        days: usize,
        /// Item count for the shared-factor scenario.
        #[arg(long, default_value_t = 5)]
        n_items: usize,
    },
    /// Filter every model through the data and save the final states.
    Fit {
        #[arg(long)]
        data: PathBuf,
    },
    /// Forecast past the end of the data from fitted states.
    Forecast {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score a forecast-sample file against realized sales.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        samples: PathBuf,
    },
    /// Rolling-origin forecast experiment.
    RunExperiment {
        #[arg(long)]
        data: PathBuf,
    },
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(m) = g.paths {
        cfg.paths = m;
    }
    if let Some(k) = g.horizon {
        cfg.horizon = k;
    }
    if let Some(items) = &g.items {
        cfg.items = Some(items.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(path: &Path, cfg: &ExperimentConfig) -> Result<txsales::pipeline::Dataset> {
    let rows = read_transactions(path)?;
    let mut data = ingest(&rows, cfg.depth)?;
    if let Some(keep) = &cfg.items {
        data.retain_items(keep);
    }
    Ok(data)
}

fn write_manifest(dir: &Path, entries: &[txsales::pipeline::ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e)?);
        text.push('\n');
    }
    std::fs::write(dir.join("manifest.jsonl"), text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let out = &cli.global.output;
    std::fs::create_dir_all(out)?;
    match cli.command {
        Command::SimulateData {
            scenario,
            scenario_file,
            days,
            n_items,
        } => {
            let sc = match scenario_file {
                Some(p) => toml::from_str::<Scenario>(&std::fs::read_to_string(p)?)
                    .map_err(|e| Error::Config(e.to_string()))?,
                None => match scenario {
                    ScenarioKind::ItemALike => Scenario::item_a_like(days),
                    ScenarioKind::SharedFactor => Scenario::shared_factor(n_items, days),
                },
            };
            let (rows, truth) = generate_synthetic(&sc, &RngStream::new(cfg.seed, 0))?;
            write_transactions(&out.join("transactions.csv"), &rows)?;
            let mut w = csv::Writer::from_path(out.join("truth.csv"))?;
            w.write_record(["item_id", "date", "p_active", "rate", "shared_effect", "price", "promo", "cascade"])?;
            for t in &truth {
                let cascade: Vec<String> = t.cascade.iter().map(|p| format!("{p}")).collect();
                w.write_record([
                    t.item_id.clone(),
                    t.date.to_string(),
                    format!("{}", t.p_active),
                    format!("{}", t.rate),
                    format!("{}", t.shared_effect),
                    format!("{}", t.price),
                    u8::from(t.promo).to_string(),
                    cascade.join(";"),
                ])?;
            }
            w.flush()?;
            log::info!("wrote {} transactions", rows.len());
        }
        Command::Fit { data } => {
            let ds = load_data(&data, &cfg)?;
            let (ck, manifest) = fit_all(&cfg, &ds)?;
            std::fs::write(out.join("checkpoint.json"), serde_json::to_string(&ck)?)?;
            write_manifest(out, &manifest)?;
        }
        Command::Forecast { data, checkpoint } => {
            let ds = load_data(&data, &cfg)?;
            let ck: FitCheckpoint = serde_json::from_str(&std::fs::read_to_string(checkpoint)?)?;
            let forecasts = forecast_from_checkpoint(&cfg, &ds, &ck)?;
            let mut samples = csv::Writer::from_path(out.join("samples.csv"))?;
            samples.write_record(["item", "model", "rho", "origin", "horizon", "path", "y", "no_excess"])?;
            let mut summary = csv::Writer::from_path(out.join("forecast_summary.csv"))?;
            for (item, fc) in &forecasts {
                write_forecast_samples(&mut samples, &item.item, item.variant, item.rho, ds.start, fc)?;
                for row in summarize_forecast(item, ds.start, fc)? {
                    summary.serialize(row)?;
                }
            }
            samples.flush()?;
            summary.flush()?;
        }
        Command::Evaluate { data, samples } => {
            let ds = load_data(&data, &cfg)?;
            let mut rdr = csv::Reader::from_path(samples)?;
            let rows = rdr.deserialize::<SampleRow>().collect::<std::result::Result<Vec<_>, _>>()?;
            let tables = evaluate_samples(&rows, &ds, &cfg)?;
            let mut w = csv::Writer::from_path(out.join("metrics.csv"))?;
            w.write_record(["item", "model", "rho", "horizon", "metric", "value", "excluded"])?;
            for it in &tables {
                let t = &it.table;
                for (i, v) in t.values.iter().enumerate() {
                    w.write_record([
                        it.item.clone(),
                        t.model.clone(),
                        t.rho.map_or_else(String::new, |r| format!("{r}")),
                        (i + 1).to_string(),
                        t.metric.clone(),
                        format!("{v}"),
                        t.excluded[i].to_string(),
                    ])?;
                }
            }
            w.flush()?;
        }
        Command::RunExperiment { data } => {
            let ds = load_data(&data, &cfg)?;
            let report = run_experiment(&cfg, &ds)?;
            report.write(out, &cfg)?;
            let failed = report.manifest.iter().filter(|e| e.status != "ok").count();
            if failed > 0 {
                log::warn!("{failed} item(s) failed; see manifest.jsonl");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
