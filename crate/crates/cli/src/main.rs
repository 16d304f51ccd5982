//! `dmgcrn` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dmgcrn::config::{sha256_json, RunConfig};
use dmgcrn::data::{load_series, TimeSeriesDataset};
use dmgcrn::forecast::{attention_rows, predict_window, write_attention_csv};
use dmgcrn::graph::{build_graphs, BuiltGraphs, GraphBuildConfig, RoadNetwork};
use dmgcrn::metrics::MetricsReport;
use dmgcrn::model::Dmgcrn;
use dmgcrn::synth::{generate_synthetic, SynthSpec};
use dmgcrn::train::{evaluate, evaluate_ha, write_log_csv, Checkpoint, ForecastData, Trainer};
use dmgcrn::{Error, Execution};

const SERIES_FILE: &str = "series.csv";
const SENSORS_FILE: &str = "sensors.csv";
const EDGES_FILE: &str = "edges.csv";

#[derive(Parser)]
#[command(name = "dmgcrn", version, about = "Multi-graph recurrent traffic forecasting")]
struct Cli {
    /// Run every data-parallel stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the distance and latent graphs with their region tensors.
    BuildGraphs {
        /// Directed road segments: `from,to,distance`.
        #[arg(long)]
        edges: PathBuf,
        /// Sensor table: `id,longitude,latitude`.
        #[arg(long)]
        sensors: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Run config whose `graphs` section supplies defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Kernel threshold for the distance graph.
        #[arg(long = "epsilon-d")]
        epsilon_d: Option<f64>,
        /// Kernel threshold for the latent graph.
        #[arg(long = "epsilon-l")]
        epsilon_l: Option<f64>,
        /// Seed for the structural embedding.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write a checkpoint plus a per-epoch log CSV.
    Train {
        /// Run config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Data directory holding `series.csv`.
        #[arg(long)]
        data: PathBuf,
        /// Graph directory written by `build-graphs`.
        #[arg(long)]
        graphs: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Log CSV path; defaults to the checkpoint path with `.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Data directory holding `series.csv`.
        #[arg(long)]
        data: PathBuf,
        /// Graph directory; its hash must match the checkpoint.
        #[arg(long)]
        graphs: PathBuf,
        /// Report path (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast the steps after one history window.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        /// History CSV: `timestamp,<sensor>,...`; the last rows are used.
        #[arg(long)]
        window: PathBuf,
        /// Forecast CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump region attention for one window.
    ExportAttention {
        #[arg(long)]
        ckpt: PathBuf,
        /// History CSV: `timestamp,<sensor>,...`.
        #[arg(long)]
        window: PathBuf,
        /// Output CSV: `timestep,sensor_id,channel,region,alpha`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic road network and series.
    Synth {
        /// Generator spec (JSON); missing fields take defaults.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for `series.csv`, `sensors.csv` and `edges.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Historical-average metrics on the test split.
    BaselineHa {
        /// Data directory holding `series.csv`.
        #[arg(long)]
        data: PathBuf,
        /// Report path (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Run config supplying the split and window lengths.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numerical(_) | Error::NonFinite(_) | Error::Autodiff(_) => 3,
        _ => 2,
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_report(path: &Path, report: &MetricsReport) -> Result<(), Error> {
    if !report.is_consistent() {
        return Err(Error::Numerical("report violates MAE <= RMSE".into()));
    }
    write_text(path, &report.to_json()?)?;
    let m = report.overall;
    println!("MAE {:.4}  RMSE {:.4}  MAPE {}", m.mae, m.rmse, m.mape.map_or("n/a".into(), |p| format!("{p:.2}%")));
    for b in &report.buckets {
        println!("  {:>6}: MAE {:.4}  RMSE {:.4}", b.label, b.metrics.mae, b.metrics.rmse);
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Dmgcrn), Error> {
    let ckpt = Checkpoint::load(path)?;
    let model = ckpt.model()?;
    Ok((ckpt, model))
}

fn load_window(path: &Path, ids: &[String]) -> Result<TimeSeriesDataset, Error> {
    TimeSeriesDataset::from_csv(path)?.aligned_to(ids)
}

fn run(cli: Cli) -> Result<(), Error> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::BuildGraphs {
            edges,
            sensors,
            out,
            config,
            epsilon_d,
            epsilon_l,
            seed,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(p)?.graphs,
                None => GraphBuildConfig::default(),
            };
            cfg.epsilon_distance = epsilon_d.unwrap_or(cfg.epsilon_distance);
            cfg.epsilon_latent = epsilon_l.unwrap_or(cfg.epsilon_latent);
            cfg.struc2vec.seed = seed.unwrap_or(cfg.struc2vec.seed);
            let net = RoadNetwork::from_csv(sensors, edges)?;
            let graphs = build_graphs(&net, &cfg, exec)?;
            create_dir(&out)?;
            let meta = graphs.write_dir(&out, &sha256_json(&cfg))?;
            println!(
                "{} sensors, {} distance edges, {} latent edges, hash {}",
                meta.sensor_ids.len(),
                graphs.distance.edge_count(),
                graphs.latent.edge_count(),
                meta.graph_hash
            );
        }
        Command::Train {
            config,
            data,
            graphs,
            out,
            log,
        } => {
            let cfg = RunConfig::load(config)?;
            let (built, meta) = BuiltGraphs::read_dir(&graphs)?;
            if meta.config_hash != sha256_json(&cfg.graphs) {
                eprintln!("note: graphs were built with a different graph config than {}", cfg.hash());
            }
            let series = load_series(data.join(SERIES_FILE), &built.sensor_ids)?;
            if series.features() != cfg.model.features {
                return Err(Error::Config(format!(
                    "model expects {} features but the series has {}",
                    cfg.model.features,
                    series.features()
                )));
            }
            let fd = ForecastData::new(&series, &cfg.split, cfg.model.history, cfg.model.horizon)?;
            let model = Dmgcrn::new(
                cfg.model.clone(),
                built.graph_set(cfg.model.mechanisms.use_latent),
                cfg.train.seed,
            )?;
            let mut trainer = Trainer::new(model, cfg.train.clone(), fd.stats.clone(), exec)?;
            let outcome = trainer.fit(&fd, |row| {
                println!(
                    "epoch {:>3}  loss {:.4}  val MAE {:.4}  lr {:.2e}  tf {:.3}",
                    row.epoch, row.train_loss, row.val_mae, row.lr, row.teacher_forcing_prob
                )
            })?;
            let ckpt = trainer.checkpoint(&cfg.hash(), &built.hash(), &built.sensor_ids, &cfg.split);
            ckpt.save(&out)?;
            let log = log.unwrap_or_else(|| out.with_extension("log.csv"));
            write_log_csv(&log, &outcome.log)?;
            println!(
                "best val MAE {:.4} at epoch {}{}; wrote {} and {}",
                outcome.best_val_mae,
                outcome.best_epoch,
                if outcome.stopped_early { " (stopped early)" } else { "" },
                out.display(),
                log.display()
            );
        }
        Command::Evaluate {
            ckpt,
            data,
            graphs,
            out,
        } => {
            let (ckpt, model) = load_checkpoint(&ckpt)?;
            let (built, _) = BuiltGraphs::read_dir(&graphs)?;
            ckpt.check_graph_hash(&built.hash())?;
            let series = load_series(data.join(SERIES_FILE), &ckpt.sensor_ids)?;
            let cfg = &ckpt.model_config;
            let fd = ForecastData::with_stats(&series, &ckpt.split, cfg.history, cfg.horizon, ckpt.norm.clone())?;
            let report = evaluate(&model, &fd, &fd.test, exec)?;
            write_report(&out, &report)?;
        }
        Command::Predict { ckpt, window, out } => {
            let (ckpt, model) = load_checkpoint(&ckpt)?;
            let window = load_window(&window, &ckpt.sensor_ids)?;
            predict_window(&model, &ckpt.norm, &window)?.write_csv(&out)?;
        }
        Command::ExportAttention { ckpt, window, out } => {
            let (ckpt, model) = load_checkpoint(&ckpt)?;
            let window = load_window(&window, &ckpt.sensor_ids)?;
            let rows = attention_rows(&model, &ckpt.norm, &window)?;
            write_attention_csv(&out, &rows)?;
            println!("{} attention rows", rows.len());
        }
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(&spec).map_err(|source| Error::Io {
                path: spec.display().to_string(),
                source,
            })?;
            let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| Error::Config(format!("synth spec: {e}")))?;
            let syn = generate_synthetic(&spec)?;
            create_dir(&out)?;
            syn.series.write_csv(out.join(SERIES_FILE))?;
            syn.network.write_csv(out.join(SENSORS_FILE), out.join(EDGES_FILE))?;
            println!("{} sensors, {} steps, {} road segments", syn.network.len(), syn.series.len(), syn.network.edges().len());
        }
        Command::BaselineHa { data, out, config } => {
            let cfg = match config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            let series = TimeSeriesDataset::from_csv(data.join(SERIES_FILE))?;
            let fd = ForecastData::new(&series, &cfg.split, cfg.model.history, cfg.model.horizon)?;
            write_report(&out, &evaluate_ha(&fd, &fd.test)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
