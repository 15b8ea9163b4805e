use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fofl_core::fedcore::Algorithm;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, CliResult};
use crate::run::RunSummary;

/// Mean and sample standard deviation; a single value has zero spread.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Stat { mean, std, n })
    }
}

/// Grouping key: the algorithm plus the participation and churn sweep axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupKey {
    pub algorithm: Algorithm,
    pub participation: f64,
    pub p_leave: f64,
    pub p_join: f64,
}

impl GroupKey {
    fn of(s: &RunSummary) -> Self {
        Self { algorithm: s.algorithm, participation: s.participation, p_leave: s.p_leave, p_join: s.p_join }
    }

    fn order(&self) -> (f64, f64, f64, Algorithm) {
        (self.participation, self.p_leave, self.p_join, self.algorithm)
    }

    fn sort_key(&self) -> (Algorithm, u64, u64, u64) {
        (self.algorithm, self.participation.to_bits(), self.p_leave.to_bits(), self.p_join.to_bits())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    #[serde(flatten)]
    pub key: GroupKey,
    pub seeds: Vec<u64>,
    pub rmse: Option<Stat>,
    pub mae: Option<Stat>,
    pub mape: Option<Stat>,
    pub best_rmse: Option<Stat>,
    pub d_mean: Option<Stat>,
    pub d_cv: Option<Stat>,
    pub pearson: Option<Stat>,
    pub spearman: Option<Stat>,
    pub amortized_s: Option<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    #[serde(flatten)]
    pub key: GroupKey,
    pub theta: f64,
    pub seeds: usize,
    /// Seeds that reached the threshold.
    pub reached: usize,
    /// Over the seeds that reached it.
    pub round: Option<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub groups: Vec<GroupRow>,
    pub rounds_to_threshold: Vec<ThresholdRow>,
    pub runs: Vec<RunSummary>,
}

fn find_summaries(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    let direct = dir.join("summary.json");
    if direct.is_file() {
        out.push(direct);
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(CliError::Data, "cannot read run directory", dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for e in entries {
        find_summaries(&e, out)?;
    }
    Ok(())
}

pub fn load_summaries(dirs: &[PathBuf]) -> CliResult<Vec<RunSummary>> {
    let mut paths = Vec::new();
    for d in dirs {
        find_summaries(d, &mut paths)?;
    }
    if paths.is_empty() {
        return Err(CliError::Data("no summary.json found under the given run directories".into()));
    }
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| io_err(CliError::Data, "cannot read", p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("invalid summary `{}`: {e}", p.display())))
        })
        .collect()
}

/// Pools runs per algorithm and sweep point. Refuses runs whose
/// configurations differ in anything other than the sweep axes and seed.
pub fn build_report(mut runs: Vec<RunSummary>) -> CliResult<Report> {
    let Some(first) = runs.first() else {
        return Err(CliError::Data("no runs to aggregate".into()));
    };
    let hash = first.config_hash.clone();
    if let Some(other) = runs.iter().find(|r| r.config_hash != hash) {
        return Err(CliError::Config(format!(
            "runs come from different configurations (hash {}… vs {}…); refusing to aggregate",
            &hash[..12.min(hash.len())],
            &other.config_hash[..12.min(other.config_hash.len())]
        )));
    }
    runs.sort_by(|a, b| GroupKey::of(a).sort_key().cmp(&GroupKey::of(b).sort_key()).then(a.seed.cmp(&b.seed)));

    let mut groups: BTreeMap<(Algorithm, u64, u64, u64), Vec<&RunSummary>> = BTreeMap::new();
    for r in &runs {
        groups.entry(GroupKey::of(r).sort_key()).or_default().push(r);
    }
    let mut rows = Vec::new();
    let mut thresholds = Vec::new();
    for members in groups.values() {
        let key = GroupKey::of(members[0]);
        let mut seeds: Vec<u64> = members.iter().map(|r| r.seed).collect();
        seeds.dedup();
        if seeds.len() != members.len() {
            return Err(CliError::Data(format!("duplicate seed among {} runs", key.algorithm)));
        }
        let col = |f: &dyn Fn(&RunSummary) -> Option<f64>| Stat::of(&members.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
        rows.push(GroupRow {
            rmse: col(&|r| r.final_metrics.map(|m| m.rmse)),
            mae: col(&|r| r.final_metrics.map(|m| m.mae)),
            mape: col(&|r| r.final_metrics.map(|m| m.mape)),
            best_rmse: col(&|r| r.best_rmse),
            d_mean: col(&|r| r.drift_stats.as_ref().map(|d| d.d_mean)),
            d_cv: col(&|r| r.drift_stats.as_ref().map(|d| d.d_cv)),
            pearson: col(&|r| r.roughness_drift_coupling.map(|c| c.pearson)),
            spearman: col(&|r| r.roughness_drift_coupling.map(|c| c.spearman)),
            amortized_s: col(&|r| Some(r.overhead_report.amortized_s)),
            seeds,
            key: key.clone(),
        });
        let mut thetas: Vec<f64> = members.iter().flat_map(|r| r.rounds_to_threshold.iter().map(|h| h.theta)).collect();
        thetas.sort_by(|a, b| b.total_cmp(a));
        thetas.dedup();
        for theta in thetas {
            let hits: Vec<f64> = members
                .iter()
                .filter_map(|r| r.rounds_to_threshold.iter().find(|h| h.theta == theta).and_then(|h| h.round))
                .map(|t| t as f64)
                .collect();
            thresholds.push(ThresholdRow { key: key.clone(), theta, seeds: members.len(), reached: hits.len(), round: Stat::of(&hits) });
        }
    }
    Ok(Report { config_hash: hash, groups: rows, rounds_to_threshold: thresholds, runs })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn stat_fields(s: Option<Stat>) -> [String; 2] {
    [fmt_opt(s.map(|s| s.mean)), fmt_opt(s.map(|s| s.std))]
}

fn key_fields(k: &GroupKey) -> [String; 4] {
    [k.algorithm.name().to_string(), k.participation.to_string(), k.p_leave.to_string(), k.p_join.to_string()]
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("cannot create `{}`: {e}", path.display())))?;
    let runtime = |e: csv::Error| CliError::Runtime(format!("cannot write `{}`: {e}", path.display()));
    w.write_record(header).map_err(runtime)?;
    for r in rows {
        w.write_record(&r).map_err(runtime)?;
    }
    w.flush().map_err(|e| io_err(CliError::Runtime, "cannot write", path, e))
}

fn with_suffix(out: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    out.with_file_name(format!("{stem}{suffix}.{ext}"))
}

/// Writes `<stem>.csv`, `<stem>.json`, `<stem>_sweep.csv` and
/// `<stem>_rounds_to_threshold.csv` next to `out`. Returns the paths.
pub fn write_report(report: &Report, out: &Path) -> CliResult<Vec<PathBuf>> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(CliError::Runtime, "cannot create directory", parent, e))?;
    }
    const METRICS: [&str; 9] = ["rmse", "mae", "mape", "best_rmse", "d_mean", "d_cv", "pearson", "spearman", "amortized_s"];
    let mut header = vec!["algorithm", "participation", "p_leave", "p_join", "n_seeds"];
    let names: Vec<String> = METRICS.iter().flat_map(|m| [format!("{m}_mean"), format!("{m}_std")]).collect();
    header.extend(names.iter().map(String::as_str));
    let row_of = |g: &GroupRow| -> Vec<String> {
        let mut r: Vec<String> = key_fields(&g.key).to_vec();
        r.push(g.seeds.len().to_string());
        for s in [g.rmse, g.mae, g.mape, g.best_rmse, g.d_mean, g.d_cv, g.pearson, g.spearman, g.amortized_s] {
            r.extend(stat_fields(s));
        }
        r
    };

    let main = with_suffix(out, "", "csv");
    write_csv(&main, &header, report.groups.iter().map(row_of).collect())?;

    let mut sweep: Vec<&GroupRow> = report.groups.iter().collect();
    sweep.sort_by(|a, b| a.key.order().partial_cmp(&b.key.order()).unwrap_or(std::cmp::Ordering::Equal));
    let sweep_path = with_suffix(out, "_sweep", "csv");
    write_csv(&sweep_path, &header, sweep.into_iter().map(row_of).collect())?;

    let rt_path = with_suffix(out, "_rounds_to_threshold", "csv");
    write_csv(
        &rt_path,
        &["algorithm", "participation", "p_leave", "p_join", "theta", "n_seeds", "reached", "round_mean", "round_std"],
        report
            .rounds_to_threshold
            .iter()
            .map(|t| {
                let mut r = key_fields(&t.key).to_vec();
                r.extend([t.theta.to_string(), t.seeds.to_string(), t.reached.to_string()]);
                r.extend(stat_fields(t.round));
                r
            })
            .collect(),
    )?;

    let json_path = with_suffix(out, "", "json");
    let text = serde_json::to_string_pretty(report).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&json_path, text + "\n").map_err(|e| io_err(CliError::Runtime, "cannot write", &json_path, e))?;
    Ok(vec![main, json_path, sweep_path, rt_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_of_single_value_has_zero_std() {
        assert_eq!(Stat::of(&[4.0]), Some(Stat { mean: 4.0, std: 0.0, n: 1 }));
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[]), None);
    }

    #[test]
    fn suffix_paths() {
        assert_eq!(with_suffix(Path::new("out/rep.csv"), "_sweep", "csv"), PathBuf::from("out/rep_sweep.csv"));
        assert_eq!(with_suffix(Path::new("rep"), "", "json"), PathBuf::from("rep.json"));
    }
}
