//! Evaluation engine: utility metrics on the physical Wh scale,
//! convergence curves, drift dispersion, roughness–drift coupling,
//! tertile stratification and overhead accounting.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{mean, pearson, population_std, spearman, ParamVector};

/// Per-client statistics for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundStat {
    pub client: usize,
    pub n_k: usize,
    /// `‖w_{t+1}^k − w_t‖₂`
    pub drift: f64,
    pub roughness: Option<f64>,
    pub kappa: Option<f64>,
    pub probed: bool,
    pub local_steps: usize,
    pub final_loss: f64,
    pub train_seconds: f64,
    pub diag_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub n_available: usize,
    pub probe_round: bool,
    /// Sorted by client id.
    pub participants: Vec<ClientRoundStat>,
    pub metrics: Option<MetricSnapshot>,
    pub train_seconds: f64,
    pub diag_seconds: f64,
    /// Broadcast model and returned client models, kept only when requested.
    #[serde(skip)]
    pub audit: Option<RoundAudit>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundAudit {
    pub broadcast: ParamVector,
    pub client_params: Vec<(usize, ParamVector)>,
}

impl RoundRecord {
    pub fn drifts(&self) -> Vec<f64> {
        self.participants.iter().map(|c| c.drift).collect()
    }

    pub fn participant_ids(&self) -> Vec<usize> {
        self.participants.iter().map(|c| c.client).collect()
    }

    pub fn stat(&self, client: usize) -> Option<&ClientRoundStat> {
        self.participants.iter().find(|c| c.client == client)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Pool every evaluation sample.
    #[default]
    Micro,
    /// Unweighted mean of per-client metrics.
    Macro,
    /// `n_k`-weighted mean of per-client metrics.
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Val,
    #[default]
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Fixed MAPE stabilizer; `None` uses `1e-3 · median |y|` of each
    /// client's training labels.
    #[serde(default)]
    pub eps_y: Option<f64>,
    pub eps_d: f64,
    #[serde(default)]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub averaging: Averaging,
    #[serde(default = "one")]
    pub eval_every: usize,
    #[serde(default)]
    pub eval_split: EvalSplit,
    /// Round at which roughness–drift correlations are reported.
    #[serde(default)]
    pub coupling_round: Option<usize>,
}

fn one() -> usize {
    1
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            eps_y: None,
            eps_d: 1e-8,
            thresholds: Vec::new(),
            averaging: Averaging::Micro,
            eval_every: 1,
            eval_split: EvalSplit::Test,
            coupling_round: None,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.eps_y {
            if !(e > 0.0) {
                return Err(Error::Config(format!("eps_y must be positive, got {e}")));
            }
        }
        if !(self.eps_d > 0.0) {
            return Err(Error::Config(format!("eps_d must be positive, got {}", self.eps_d)));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_pair(preds: &[f64], labels: &[f64]) -> Result<()> {
    check_len(labels.len(), preds.len())?;
    if preds.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    Ok(())
}

pub fn rmse(preds: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(preds, labels)?;
    let ss: f64 = preds.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok((ss / preds.len() as f64).sqrt())
}

pub fn mae(preds: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(preds, labels)?;
    Ok(preds.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum::<f64>() / preds.len() as f64)
}

/// `100 · mean(|ŷ − y| / (|y| + ε_Y))`
pub fn mape(preds: &[f64], labels: &[f64], eps_y: f64) -> Result<f64> {
    check_pair(preds, labels)?;
    let s: f64 = preds.iter().zip(labels).map(|(p, y)| (p - y).abs() / (y.abs() + eps_y)).sum();
    Ok(100.0 * s / preds.len() as f64)
}

/// Running error sums for one client (or one pooled set).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorSums {
    pub n: usize,
    pub sq: f64,
    pub abs: f64,
    pub pct: f64,
}

impl ErrorSums {
    pub fn accumulate(preds: &[f64], labels: &[f64], eps_y: f64) -> Result<Self> {
        check_pair(preds, labels)?;
        let mut s = Self::default();
        for (p, y) in preds.iter().zip(labels) {
            let e = p - y;
            s.n += 1;
            s.sq += e * e;
            s.abs += e.abs();
            s.pct += e.abs() / (y.abs() + eps_y);
        }
        Ok(s)
    }

    pub fn merge(&mut self, other: &ErrorSums) {
        self.n += other.n;
        self.sq += other.sq;
        self.abs += other.abs;
        self.pct += other.pct;
    }

    pub fn snapshot(&self) -> Result<MetricSnapshot> {
        if self.n == 0 {
            return Err(Error::Empty("evaluation set"));
        }
        let n = self.n as f64;
        Ok(MetricSnapshot { rmse: (self.sq / n).sqrt(), mae: self.abs / n, mape: 100.0 * self.pct / n })
    }
}

/// Combines per-client error sums under the chosen averaging rule. Clients
/// with no samples are ignored.
pub fn combine(per_client: &[ErrorSums], averaging: Averaging) -> Result<MetricSnapshot> {
    let present: Vec<&ErrorSums> = per_client.iter().filter(|s| s.n > 0).collect();
    if present.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    match averaging {
        Averaging::Micro => {
            let mut total = ErrorSums::default();
            present.iter().for_each(|s| total.merge(s));
            total.snapshot()
        }
        Averaging::Macro | Averaging::Weighted => {
            let snaps: Vec<(f64, MetricSnapshot)> = present
                .iter()
                .map(|s| Ok((s.n as f64, s.snapshot()?)))
                .collect::<Result<_>>()?;
            let weight = |n: f64| if averaging == Averaging::Macro { 1.0 } else { n };
            let wsum: f64 = snaps.iter().map(|(n, _)| weight(*n)).sum();
            let avg = |f: fn(&MetricSnapshot) -> f64| {
                snaps.iter().map(|(n, s)| weight(*n) * f(s)).sum::<f64>() / wsum
            };
            Ok(MetricSnapshot { rmse: avg(|s| s.rmse), mae: avg(|s| s.mae), mape: avg(|s| s.mape) })
        }
    }
}

/// First index whose value is `<= theta`, or `None` when never reached.
pub fn rounds_to_threshold(series: &[f64], theta: f64) -> Option<usize> {
    series.iter().position(|&v| v <= theta)
}

/// Running minimum.
pub fn best_so_far(series: &[f64]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    series
        .iter()
        .map(|&v| {
            best = best.min(v);
            best
        })
        .collect()
}

/// `(D_mean, D_cv)` over the round's participants.
pub fn drift_stats(record: &RoundRecord, eps_d: f64) -> Result<(f64, f64)> {
    if record.participants.is_empty() {
        return Err(Error::Empty("round participants"));
    }
    let d = record.drifts();
    let m = mean(&d);
    Ok((m, population_std(&d) / (m + eps_d)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub round: usize,
    pub n: usize,
    pub pearson: f64,
    pub spearman: f64,
}

/// Pearson and Spearman correlation between `I_k` and drift over the
/// participants of round `t` that carry a roughness value.
pub fn roughness_drift_coupling(records: &[RoundRecord], t: usize) -> Result<Coupling> {
    let rec = records
        .iter()
        .find(|r| r.round == t)
        .ok_or_else(|| Error::Data(format!("no record for round {t}")))?;
    let (rough, drift): (Vec<f64>, Vec<f64>) = rec
        .participants
        .iter()
        .filter_map(|c| c.roughness.map(|i| (i, c.drift)))
        .unzip();
    coupling_from_pairs(t, &rough, &drift)
}

pub fn coupling_from_pairs(round: usize, roughness: &[f64], drift: &[f64]) -> Result<Coupling> {
    check_len(roughness.len(), drift.len())?;
    if roughness.len() < 3 {
        return Err(Error::UndefinedCorrelation("fewer than three clients with roughness and drift"));
    }
    Ok(Coupling {
        round,
        n: roughness.len(),
        pearson: pearson(roughness, drift)?,
        spearman: spearman(roughness, drift)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyDrift {
    pub client: usize,
    pub roughness: f64,
    pub mean_drift: f64,
    pub participations: usize,
}

/// For each client probed at `probe_round`, its roughness and the mean drift
/// over the rounds in `[window.0, window.1]` where it participated. Clients
/// that never participated in the window are omitted.
pub fn early_drift_predictor(records: &[RoundRecord], probe_round: usize, window: (usize, usize)) -> Vec<EarlyDrift> {
    let Some(probe) = records.iter().find(|r| r.round == probe_round) else {
        return Vec::new();
    };
    probe
        .participants
        .iter()
        .filter_map(|c| {
            let roughness = c.roughness?;
            let drifts: Vec<f64> = records
                .iter()
                .filter(|r| r.round >= window.0 && r.round <= window.1)
                .filter_map(|r| r.stat(c.client).map(|s| s.drift))
                .collect();
            (!drifts.is_empty()).then(|| EarlyDrift {
                client: c.client,
                roughness,
                mean_drift: mean(&drifts),
                participations: drifts.len(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tertiles {
    pub low: Vec<usize>,
    pub med: Vec<usize>,
    pub high: Vec<usize>,
}

/// Splits clients into value tertiles. Ties are ordered by client id and
/// remainder clients go to the lower strata first.
pub fn stratify_tertiles(values: &[(usize, f64)]) -> Tertiles {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let n = sorted.len();
    let (base, rem) = (n / 3, n % 3);
    let n_low = base + usize::from(rem > 0);
    let n_med = base + usize::from(rem > 1);
    let ids: Vec<usize> = sorted.into_iter().map(|(c, _)| c).collect();
    Tertiles {
        low: ids[..n_low].to_vec(),
        med: ids[n_low..n_low + n_med].to_vec(),
        high: ids[n_low + n_med..].to_vec(),
    }
}

/// `((R − 1)·T_nonprobe + T_probe) / R`
pub fn amortized_round_time(t_nonprobe: f64, t_probe: f64, r_probe: usize) -> f64 {
    let r = r_probe.max(1) as f64;
    ((r - 1.0) * t_nonprobe + t_probe) / r
}

/// `100 · (method − reference) / reference`
pub fn overhead_percent(method: f64, reference: f64) -> f64 {
    100.0 * (method - reference) / reference
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub t_probe_s: f64,
    pub t_nonprobe_s: f64,
    pub amortized_s: f64,
    /// Mean over rounds of `T_diag / T_round`.
    pub diag_fraction: f64,
    pub overhead_pct: Option<f64>,
}

fn client_round_time(r: &RoundRecord) -> Option<f64> {
    (!r.participants.is_empty()).then(|| {
        mean(&r.participants.iter().map(|c| c.train_seconds + c.diag_seconds).collect::<Vec<_>>())
    })
}

/// Amortized per-round client-side time from logged timings, with optional
/// overhead relative to a reference amortized time.
pub fn overhead_report(records: &[RoundRecord], r_probe: usize, reference_s: Option<f64>) -> OverheadReport {
    let collect = |probe: bool| -> Vec<f64> {
        records.iter().filter(|r| r.probe_round == probe).filter_map(client_round_time).collect()
    };
    let (probe, nonprobe) = (collect(true), collect(false));
    let t_probe = if probe.is_empty() { mean(&nonprobe) } else { mean(&probe) };
    let t_nonprobe = if nonprobe.is_empty() { t_probe } else { mean(&nonprobe) };
    let amortized = amortized_round_time(t_nonprobe, t_probe, r_probe);
    let fractions: Vec<f64> = records
        .iter()
        .filter_map(|r| {
            let total = r.train_seconds + r.diag_seconds;
            (total > 0.0).then(|| r.diag_seconds / total)
        })
        .collect();
    OverheadReport {
        t_probe_s: t_probe,
        t_nonprobe_s: t_nonprobe,
        amortized_s: amortized,
        diag_fraction: mean(&fractions),
        overhead_pct: reference_s.map(|r| overhead_percent(amortized, r)),
    }
}

pub const ROUND_CSV_HEADER: [&str; 11] = [
    "seed", "round", "algorithm", "rmse", "mae", "mape", "d_mean", "d_cv", "n_participants", "t_train_s", "t_diag_s",
];

/// Writes `metrics_round.csv`. Rounds without a metric evaluation leave the
/// metric fields empty.
pub fn write_round_csv<W: Write>(out: W, seed: u64, algorithm: &str, records: &[RoundRecord], eps_d: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ROUND_CSV_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        let (d_mean, d_cv) = match drift_stats(r, eps_d) {
            Ok((m, cv)) => (Some(m), Some(cv)),
            Err(_) => (None, None),
        };
        w.write_record([
            seed.to_string(),
            r.round.to_string(),
            algorithm.to_string(),
            opt(r.metrics.map(|m| m.rmse)),
            opt(r.metrics.map(|m| m.mae)),
            opt(r.metrics.map(|m| m.mape)),
            opt(d_mean),
            opt(d_cv),
            r.participants.len().to_string(),
            r.train_seconds.to_string(),
            r.diag_seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
