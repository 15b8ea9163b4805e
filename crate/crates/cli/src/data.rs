use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use fofl_core::bevdata::{
    build_client_dataset, ingest_csv, synth_fleet, write_trips_csv, ClientDataset, CsvSchema, SplitAssignment,
    StandardFeatures, TripTrace,
};
use fofl_core::{Purpose, RngStream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig};
use crate::error::{io_err, CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientEntry {
    pub client_id: usize,
    pub vehicle_id: String,
    /// Relative to the data directory.
    pub file: String,
    pub num_trips: usize,
    pub split: SplitAssignment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub data_hash: String,
    pub dt_s: f64,
    pub l_win: usize,
    pub clients: Vec<ClientEntry>,
}

/// Per-client trips in client-id order.
fn collect_trips(cfg: &ExperimentConfig) -> CliResult<(f64, Vec<Vec<TripTrace>>)> {
    match &cfg.data.source {
        DataSource::Synthetic => {
            let fleet = synth_fleet(&cfg.fleet)?;
            Ok((cfg.fleet.dt_s, fleet.into_iter().map(|(_, trips)| trips).collect()))
        }
        DataSource::Csv { path, schema } => {
            let report = ingest_csv(path, schema)
                .map_err(|e| CliError::Data(format!("cannot ingest `{}`: {e}", path.display())))?;
            let mut by_vehicle: BTreeMap<String, Vec<TripTrace>> = BTreeMap::new();
            for t in report.trips {
                by_vehicle.entry(t.vehicle_id.clone()).or_default().push(t);
            }
            if by_vehicle.len() != cfg.fed.clients {
                return Err(CliError::Config(format!(
                    "`{}` holds {} vehicles but fed.clients is {}",
                    path.display(),
                    by_vehicle.len(),
                    cfg.fed.clients
                )));
            }
            Ok((schema.dt_s, by_vehicle.into_values().collect()))
        }
    }
}

fn create_file(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(CliError::Runtime, "cannot create", path, e))
}

/// Writes one trip CSV per client plus the manifest with trip-level splits.
pub fn generate_data(cfg: &ExperimentConfig, out: &Path) -> CliResult<Manifest> {
    cfg.validate()?;
    let (dt_s, clients) = collect_trips(cfg)?;
    let dir = out.join("clients");
    fs::create_dir_all(&dir).map_err(|e| io_err(CliError::Runtime, "cannot create directory", &dir, e))?;

    let mut entries = Vec::with_capacity(clients.len());
    for (k, trips) in clients.iter().enumerate() {
        let file = format!("clients/client_{k:03}.csv");
        let mut w = create_file(&out.join(&file))?;
        write_trips_csv(&mut w, trips)?;
        w.flush().map_err(|e| io_err(CliError::Runtime, "cannot write", &out.join(&file), e))?;
        let ids: Vec<String> = trips.iter().map(|t| t.trip_id.clone()).collect();
        let mut rng = RngStream::for_domain(cfg.fleet.seed, 0, k as u64, Purpose::Split);
        entries.push(ClientEntry {
            client_id: k,
            vehicle_id: trips.first().map(|t| t.vehicle_id.clone()).unwrap_or_default(),
            file,
            num_trips: trips.len(),
            split: SplitAssignment::draw(&ids, &cfg.data.split, &mut rng),
        });
    }
    let manifest = Manifest { data_hash: cfg.data_hash(), dt_s, l_win: cfg.data.l_win, clients: entries };
    let path = out.join(MANIFEST);
    let mut w = create_file(&path)?;
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(CliError::Runtime, "cannot write", &path, e))?;
    log::info!("wrote {} clients to {}", manifest.clients.len(), out.display());
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|_| {
        CliError::Data(format!(
            "no dataset manifest at `{}`; run `fofl generate-data --config <CONFIG> --out {}` first",
            path.display(),
            dir.display()
        ))
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("corrupt manifest `{}`: {e}", path.display())))
}

/// Loads generated data and builds normalized per-client datasets.
pub fn load_datasets(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Vec<ClientDataset>> {
    let manifest = read_manifest(dir)?;
    if manifest.data_hash != cfg.data_hash() {
        return Err(CliError::Data(format!(
            "data in `{}` was generated from different fleet/data settings; regenerate it with `fofl generate-data`",
            dir.display()
        )));
    }
    if manifest.clients.len() != cfg.fed.clients {
        return Err(CliError::Data(format!(
            "manifest lists {} clients, config expects {}",
            manifest.clients.len(),
            cfg.fed.clients
        )));
    }
    let schema = CsvSchema { dt_s: manifest.dt_s, ..CsvSchema::default() };
    manifest
        .clients
        .par_iter()
        .enumerate()
        .map(|(k, entry)| {
            if entry.client_id != k {
                return Err(CliError::Data(format!("manifest entry {k} has client_id {}", entry.client_id)));
            }
            let path = dir.join(&entry.file);
            let report =
                ingest_csv(&path, &schema).map_err(|e| CliError::Data(format!("cannot read `{}`: {e}", path.display())))?;
            let ds = build_client_dataset(k, &report.trips, entry.split.clone(), &StandardFeatures, manifest.l_win)?;
            if ds.n_k() == 0 {
                log::warn!("client {k} has no training windows");
            }
            Ok(ds)
        })
        .collect()
}
