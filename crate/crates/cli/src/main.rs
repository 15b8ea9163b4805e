use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fofl_cli::config::{preset, ExperimentConfig, Preset};
use fofl_cli::data::{generate_data, load_datasets};
use fofl_cli::report::{build_report, load_summaries, write_report};
use fofl_cli::run::run_seed;
use fofl_cli::{CliError, CliResult};
use fofl_core::fedcore::Algorithm;

#[derive(Parser)]
#[command(name = "fofl", version, about = "Federated energy-prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ConfigSource {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in config instead of a file.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

impl ConfigSource {
    fn load(&self) -> CliResult<ExperimentConfig> {
        match (&self.config, self.preset) {
            (Some(path), _) => ExperimentConfig::load(path),
            (None, Some(p)) => Ok(preset(p)),
            (None, None) => Err(CliError::Config("either --config or --preset is required".into())),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write per-client telemetry CSVs and a split manifest.
    GenerateData {
        #[command(flatten)]
        source: ConfigSource,
        /// Output directory (defaults to the config's data_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate one algorithm for one seed (or every configured seed).
    Run {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's algorithm.
        #[arg(long)]
        algorithm: Option<String>,
        /// Data directory (defaults to the config's data_dir).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Aggregate summaries over seeds into CSV and JSON tables.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a config as JSON.
    PrintConfig {
        #[command(flatten)]
        source: ConfigSource,
    },
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("FOFL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("FOFL_THREADS must be a non-negative integer, got `{v}`")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("cannot size thread pool: {e}")))?;
    }
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::GenerateData { source, out } => {
            let cfg = source.load()?;
            let out = out.unwrap_or_else(|| cfg.data_dir.clone());
            let manifest = generate_data(&cfg, &out)?;
            println!("{} clients written to {}", manifest.clients.len(), out.display());
        }
        Command::Run { source, seed, out, algorithm, data } => {
            let mut cfg = source.load()?;
            if let Some(name) = algorithm {
                cfg.fed.algorithm = name.parse::<Algorithm>()?;
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let data_dir = data.unwrap_or_else(|| cfg.data_dir.clone());
            let datasets = load_datasets(&cfg, &data_dir)?;
            let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
            for s in seeds {
                cfg.fed.seed = s;
                let summary = run_seed(&cfg, &datasets, &out)?;
                match summary.final_metrics {
                    Some(m) => println!("{} seed {s}: rmse {:.4} mae {:.4} mape {:.2}%", cfg.fed.algorithm, m.rmse, m.mae, m.mape),
                    None => println!("{} seed {s}: no evaluation", cfg.fed.algorithm),
                }
            }
        }
        Command::Report { runs, out } => {
            let report = build_report(load_summaries(&runs)?)?;
            for path in write_report(&report, &out)? {
                println!("wrote {}", path.display());
            }
        }
        Command::PrintConfig { source } => println!("{}", source.load()?.to_json()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit()
        }
    }
}
