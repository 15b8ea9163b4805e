use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use fofl_core::bevdata::ClientDataset;
use fofl_core::fedcore::{run_experiment, Algorithm, RunOptions, RunOutput};
use fofl_core::metrics::{
    best_so_far, drift_stats, early_drift_predictor, roughness_drift_coupling, stratify_tertiles, write_round_csv,
    Coupling, MetricSnapshot, OverheadReport, RoundRecord, Tertiles,
};
use fofl_core::metrics::overhead_report;
use fofl_core::ParamVector;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{io_err, CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdHit {
    pub theta: f64,
    /// First evaluated round with RMSE at or below `theta`; `None` if never.
    pub round: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    pub round: usize,
    pub d_mean: f64,
    pub d_cv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumDrift {
    pub clients: usize,
    pub mean_roughness: Option<f64>,
    pub mean_drift: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoughnessStrata {
    pub probe_round: usize,
    pub tertiles: Tertiles,
    pub low: StratumDrift,
    pub med: StratumDrift,
    pub high: StratumDrift,
}

/// Per-run results, written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub config_hash: String,
    pub participation: f64,
    pub p_leave: f64,
    pub p_join: f64,
    pub rounds: usize,
    pub final_metrics: Option<MetricSnapshot>,
    pub best_rmse: Option<f64>,
    pub drift_stats: Option<DriftSummary>,
    pub rounds_to_threshold: Vec<ThresholdHit>,
    pub roughness_drift_coupling: Option<Coupling>,
    pub roughness_strata: Option<RoughnessStrata>,
    pub overhead_report: OverheadReport,
    pub wall_seconds: f64,
}

fn mean_of(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn strata(records: &[RoundRecord]) -> Option<RoughnessStrata> {
    let last = records.last()?.round;
    let early = early_drift_predictor(records, 0, (0, last));
    if early.len() < 3 {
        return None;
    }
    let tertiles = stratify_tertiles(&early.iter().map(|e| (e.client, e.roughness)).collect::<Vec<_>>());
    let stratum = |ids: &[usize]| {
        let rows: Vec<_> = early.iter().filter(|e| ids.contains(&e.client)).collect();
        StratumDrift {
            clients: rows.len(),
            mean_roughness: mean_of(rows.iter().map(|e| e.roughness)),
            mean_drift: mean_of(rows.iter().map(|e| e.mean_drift)),
        }
    };
    Some(RoughnessStrata {
        probe_round: 0,
        low: stratum(&tertiles.low),
        med: stratum(&tertiles.med),
        high: stratum(&tertiles.high),
        tertiles,
    })
}

/// Derives the summary of a finished run.
pub fn summarize(cfg: &ExperimentConfig, out: &RunOutput, wall_seconds: f64) -> RunSummary {
    let records = &out.records;
    let evaluated: Vec<(usize, MetricSnapshot)> = records.iter().filter_map(|r| r.metrics.map(|m| (r.round, m))).collect();
    let rmse: Vec<f64> = evaluated.iter().map(|(_, m)| m.rmse).collect();
    let rounds_to_threshold = cfg
        .metrics
        .thresholds
        .iter()
        .map(|&theta| ThresholdHit {
            theta,
            round: fofl_core::metrics::rounds_to_threshold(&rmse, theta).map(|i| evaluated[i].0),
        })
        .collect();
    let drift = records.iter().rev().find(|r| !r.participants.is_empty()).and_then(|r| {
        drift_stats(r, cfg.metrics.eps_d).ok().map(|(d_mean, d_cv)| DriftSummary { round: r.round, d_mean, d_cv })
    });
    let coupling_round = cfg.metrics.coupling_round.unwrap_or(cfg.fed.rounds / 2);
    let coupling = roughness_drift_coupling(records, coupling_round)
        .map_err(|e| log::debug!("no roughness-drift coupling at round {coupling_round}: {e}"))
        .ok();
    RunSummary {
        algorithm: cfg.fed.algorithm,
        seed: cfg.fed.seed,
        config_hash: cfg.config_hash(),
        participation: cfg.fed.participation,
        p_leave: cfg.fed.churn.p_leave,
        p_join: cfg.fed.churn.p_join,
        rounds: records.len(),
        final_metrics: evaluated.last().map(|(_, m)| *m),
        best_rmse: best_so_far(&rmse).last().copied(),
        drift_stats: drift,
        rounds_to_threshold,
        roughness_drift_coupling: coupling,
        roughness_strata: strata(records),
        overhead_report: overhead_report(records, cfg.fed.probe_every, None),
        wall_seconds,
    }
}

/// `u64` little-endian length followed by each value as little-endian `f64`.
pub fn write_model<W: Write>(mut w: W, params: &ParamVector) -> std::io::Result<()> {
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_model(bytes: &[u8]) -> CliResult<ParamVector> {
    let bad = || CliError::Data("model file is truncated or malformed".into());
    let (head, body) = bytes.split_first_chunk::<8>().ok_or_else(bad)?;
    let n = u64::from_le_bytes(*head) as usize;
    if body.len() != n.checked_mul(8).ok_or_else(bad)? {
        return Err(bad());
    }
    Ok(ParamVector::new(
        body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect(),
    ))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Runs one seed on prepared datasets and writes its artifacts under
/// `OUT/seed_<n>/`.
pub fn run_seed(cfg: &ExperimentConfig, data: &[ClientDataset], out: &Path) -> CliResult<RunSummary> {
    let start = Instant::now();
    let result = run_experiment(&cfg.fed, &cfg.metrics, data, &RunOptions::default())?;
    let summary = summarize(cfg, &result, start.elapsed().as_secs_f64());

    let dir = seed_dir(out, cfg.fed.seed);
    fs::create_dir_all(&dir).map_err(|e| io_err(CliError::Runtime, "cannot create directory", &dir, e))?;
    let csv_path = dir.join("metrics_round.csv");
    let f = File::create(&csv_path).map_err(|e| io_err(CliError::Runtime, "cannot create", &csv_path, e))?;
    write_round_csv(BufWriter::new(f), cfg.fed.seed, cfg.fed.algorithm.name(), &result.records, cfg.metrics.eps_d)?;

    let model_path = dir.join("model_final.bin");
    File::create(&model_path)
        .and_then(|f| write_model(BufWriter::new(f), &result.final_params))
        .map_err(|e| io_err(CliError::Runtime, "cannot write", &model_path, e))?;

    let summary_path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&summary_path, text + "\n").map_err(|e| io_err(CliError::Runtime, "cannot write", &summary_path, e))?;
    if let Some(m) = summary.final_metrics {
        log::info!("{} seed {}: RMSE {:.3} Wh, MAE {:.3} Wh", cfg.fed.algorithm, cfg.fed.seed, m.rmse, m.mae);
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_file_round_trip() {
        let p = ParamVector::new(vec![1.5, -0.0, f64::MIN_POSITIVE, 3e300]);
        let mut buf = Vec::new();
        write_model(&mut buf, &p).unwrap();
        assert_eq!(buf.len(), 8 + 4 * 8);
        assert_eq!(&buf[..8], &4u64.to_le_bytes());
        assert_eq!(read_model(&buf).unwrap(), p);
        assert!(read_model(&buf[..buf.len() - 1]).is_err());
        assert!(read_model(&buf[..3]).is_err());
    }
}
