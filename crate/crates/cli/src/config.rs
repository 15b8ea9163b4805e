use std::fs;
use std::path::{Path, PathBuf};

use fofl_core::bevdata::{CsvSchema, FleetConfig, Range, Severity, SplitRatios};
use fofl_core::diagnostics::RoughnessConfig;
use fofl_core::fedcore::{Algorithm, FedConfig, LocalWork};
use fofl_core::metrics::MetricConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, CliResult};

/// Where client telemetry comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Simulated fleet described by `ExperimentConfig::fleet`.
    Synthetic,
    /// Telemetry CSV; one client per vehicle id, in sorted id order.
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: Box<CsvSchema>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    /// Window length in samples.
    pub l_win: usize,
    #[serde(default)]
    pub split: SplitRatios,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { source: DataSource::Synthetic, l_win: 60, split: SplitRatios::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub fed: FedConfig,
    #[serde(default)]
    pub fleet: FleetConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub metrics: MetricConfig,
    /// Generated data (manifest and client CSVs).
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.fed.validate()?;
        self.metrics.validate()?;
        self.data.split.validate()?;
        if self.data.l_win == 0 {
            return Err(CliError::Config("data.l_win must be >= 1".into()));
        }
        if let DataSource::Synthetic = self.data.source {
            self.fleet.validate()?;
            if self.fleet.num_clients != self.fed.clients {
                return Err(CliError::Config(format!(
                    "fleet.num_clients ({}) must equal fed.clients ({})",
                    self.fleet.num_clients, self.fed.clients
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must list at least one seed".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(CliError::Config, "cannot read config", path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config `{}`: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hash of every setting that must match for runs to be pooled. Seeds,
    /// the algorithm, participation and churn are left out: they are the
    /// axes reports aggregate or sweep over. Paths are left out too.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("config is an object");
        for key in ["seeds", "data_dir", "output_dir"] {
            obj.remove(key);
        }
        if let Some(fed) = obj.get_mut("fed").and_then(Value::as_object_mut) {
            for key in ["seed", "algorithm", "participation", "churn"] {
                fed.remove(key);
            }
        }
        // serde_json maps are ordered by key, so this rendering is canonical.
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Hash of the settings that determine generated data.
    pub fn data_hash(&self) -> String {
        let v = serde_json::json!({ "fleet": self.fleet, "data": self.data, "clients": self.fed.clients });
        hex::encode(Sha256::digest(serde_json::to_string(&v).expect("value serializes").as_bytes()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// The full recipe: K=100, C=0.3, T=300, E=1, B=64, α=0.8, λ=0.1,
    /// five seeds, one-minute windows.
    Full,
    /// A 20-vehicle heterogeneous fleet sized to run in seconds.
    SyntheticSmall,
    /// A few rounds on a handful of clients.
    Smoke,
}

pub fn preset(p: Preset) -> ExperimentConfig {
    match p {
        Preset::Full => ExperimentConfig {
            fed: FedConfig::default(),
            fleet: FleetConfig { num_clients: 100, ..FleetConfig::default() },
            data: DataConfig::default(),
            metrics: MetricConfig::default(),
            data_dir: "data/full".into(),
            output_dir: "runs/full".into(),
            seeds: vec![1, 2, 3, 4, 5],
        },
        Preset::SyntheticSmall => ExperimentConfig {
            fed: FedConfig {
                clients: 20,
                participation: 0.3,
                rounds: 100,
                local_work: LocalWork::Steps(10),
                batch_size: 32,
                eta0: 0.05,
                roughness: RoughnessConfig { directions: 5, radius: 0.01, segments: 20, probe_batch: 32, ..RoughnessConfig::default() },
                hidden_dims: vec![32, 16],
                algorithm: Algorithm::FoRiFedAvg,
                ..FedConfig::default()
            },
            fleet: FleetConfig {
                num_clients: 20,
                trips_per_client: 6,
                trip_duration_s: Range::new(150.0, 300.0),
                heterogeneity: Severity::Severe,
                ..FleetConfig::default()
            },
            data: DataConfig { l_win: 20, ..DataConfig::default() },
            metrics: MetricConfig { eval_every: 5, thresholds: vec![20.0, 10.0, 5.0], ..MetricConfig::default() },
            data_dir: "data/synthetic-small".into(),
            output_dir: "runs/synthetic-small".into(),
            seeds: vec![1, 2, 3, 4, 5],
        },
        Preset::Smoke => {
            let mut cfg = preset(Preset::SyntheticSmall);
            cfg.fed.clients = 4;
            cfg.fed.rounds = 5;
            cfg.fed.participation = 0.5;
            cfg.fed.local_work = LocalWork::Steps(3);
            cfg.fed.hidden_dims = vec![8];
            cfg.fleet.num_clients = 4;
            cfg.fleet.trips_per_client = 5;
            cfg.fleet.trip_duration_s = Range::new(60.0, 90.0);
            cfg.data.l_win = 10;
            cfg.metrics.eval_every = 1;
            cfg.data_dir = "data/smoke".into();
            cfg.output_dir = "runs/smoke".into();
            cfg.seeds = vec![1];
            cfg
        }
    }
}
