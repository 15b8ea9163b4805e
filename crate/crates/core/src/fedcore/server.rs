use crate::error::{check_len, Error, Result};
use crate::metrics::RoundRecord;
use crate::numerics::{ParamVector, RngStream};

use super::config::{ChurnConfig, FedAdamConfig};

/// Global model plus server-side baseline state.
#[derive(Clone, Debug)]
pub struct ServerState {
    pub global: ParamVector,
    pub round: usize,
    pub availability: Vec<bool>,
    pub fedadam_moments: Option<(ParamVector, ParamVector)>,
    pub scaffold_control: Option<ParamVector>,
    pub round_log: Vec<RoundRecord>,
}

impl ServerState {
    pub fn new(global: ParamVector, availability: Vec<bool>) -> Self {
        Self { global, round: 0, availability, fedadam_moments: None, scaffold_control: None, round_log: Vec::new() }
    }

    pub fn available_count(&self) -> usize {
        self.availability.iter().filter(|&&a| a).count()
    }
}

/// `max(⌈C·n⌉, 1)`, never more than `n`.
pub fn participant_count(c: f64, n_available: usize) -> usize {
    // The small guard keeps products such as 0.3·10 = 3.0000000000000004 at 3.
    let raw = (c * n_available as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n_available.max(1))
}

fn force_one(availability: &mut [bool], rng: &mut RngStream) {
    if !availability.is_empty() && !availability.iter().any(|&a| a) {
        let k = rng.index(availability.len());
        log::warn!("no client available; forcing client {k} to join");
        availability[k] = true;
    }
}

/// Initial availability: exactly `max(⌈f·K⌉, 1)` clients chosen uniformly.
pub fn initial_availability(k: usize, cfg: &ChurnConfig, rng: &mut RngStream) -> Vec<bool> {
    if cfg.initial_available_fraction >= 1.0 {
        return vec![true; k];
    }
    let mut avail = vec![false; k];
    for i in rng.sample_indices(k, participant_count(cfg.initial_available_fraction, k)) {
        avail[i] = true;
    }
    avail
}

/// Uniform sample without replacement from the available clients, sorted
/// by id. An empty pool first gets one client forced available.
pub fn sample_participants(availability: &mut [bool], c: f64, rng: &mut RngStream) -> Result<Vec<usize>> {
    if availability.is_empty() {
        return Err(Error::Empty("client pool"));
    }
    force_one(availability, rng);
    let pool: Vec<usize> = (0..availability.len()).filter(|&k| availability[k]).collect();
    let m = participant_count(c, pool.len());
    let mut chosen: Vec<usize> = rng.sample_indices(pool.len(), m).into_iter().map(|i| pool[i]).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// One step of the per-client availability chain. Each client draws once,
/// in id order.
pub fn advance_churn(availability: &mut [bool], cfg: &ChurnConfig, rng: &mut RngStream) {
    for a in availability.iter_mut() {
        let u = rng.uniform();
        *a = if *a { u >= cfg.p_leave } else { u < cfg.p_join };
    }
    force_one(availability, rng);
}

/// `Σ (n_k / n_t) · w_k`, summed in ascending client id.
pub fn aggregate(updates: &[(usize, usize, &ParamVector)]) -> Result<ParamVector> {
    let Some(first) = updates.first() else {
        return Err(Error::Empty("update set"));
    };
    let mut order: Vec<&(usize, usize, &ParamVector)> = updates.iter().collect();
    order.sort_by_key(|u| u.0);
    let n_t: usize = updates.iter().map(|u| u.1).sum();
    if n_t == 0 {
        return Err(Error::Domain("total sample count is zero".into()));
    }
    let mut out = vec![0.0; first.2.len()];
    for (_, n_k, w) in order {
        check_len(out.len(), w.len())?;
        let p = *n_k as f64 / n_t as f64;
        for (o, v) in out.iter_mut().zip(w.iter()) {
            *o += p * v;
        }
    }
    let out = ParamVector::new(out);
    out.ensure_finite("aggregate")?;
    Ok(out)
}

/// Normalized averaging: `w_t + τ_eff · Σ p_k (w_k − w_t) / τ_k` with
/// `τ_eff = Σ p_k τ_k`. Equal step counts reduce to [`aggregate`].
pub fn fednova_aggregate(w_t: &ParamVector, updates: &[(usize, usize, &ParamVector, usize)]) -> Result<ParamVector> {
    let Some(first) = updates.first() else {
        return Err(Error::Empty("update set"));
    };
    if updates.iter().all(|u| u.3 == first.3) {
        let plain: Vec<_> = updates.iter().map(|u| (u.0, u.1, u.2)).collect();
        return aggregate(&plain);
    }
    let mut order: Vec<_> = updates.iter().collect();
    order.sort_by_key(|u| u.0);
    let n_t: usize = updates.iter().map(|u| u.1).sum();
    let mut dir = vec![0.0; w_t.len()];
    let mut tau_eff = 0.0;
    for (_, n_k, w, tau) in order {
        check_len(w_t.len(), w.len())?;
        if *tau == 0 {
            return Err(Error::Domain("local step count is zero".into()));
        }
        let p = *n_k as f64 / n_t as f64;
        tau_eff += p * *tau as f64;
        for ((d, a), b) in dir.iter_mut().zip(w.iter()).zip(w_t.iter()) {
            *d += p * (a - b) / *tau as f64;
        }
    }
    let out = ParamVector::new(w_t.iter().zip(&dir).map(|(w, d)| w + tau_eff * d).collect());
    out.ensure_finite("fednova")?;
    Ok(out)
}

/// Adam-style server step on the averaged update, without bias correction.
pub fn fedadam_update(
    w_t: &ParamVector,
    averaged: &ParamVector,
    moments: &mut Option<(ParamVector, ParamVector)>,
    cfg: &FedAdamConfig,
) -> Result<ParamVector> {
    check_len(w_t.len(), averaged.len())?;
    let (m, v) = moments.get_or_insert_with(|| (ParamVector::zeros(w_t.len()), ParamVector::zeros(w_t.len())));
    let mut out = Vec::with_capacity(w_t.len());
    for (((w, a), mi), vi) in w_t.iter().zip(averaged.iter()).zip(m.as_mut_slice()).zip(v.as_mut_slice()) {
        let d = a - w;
        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * d;
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * d * d;
        out.push(w + cfg.server_lr * *mi / (vi.sqrt() + cfg.eps));
    }
    let out = ParamVector::new(out);
    out.ensure_finite("fedadam")?;
    Ok(out)
}

/// `c ← c + mean_k Δc_k` over participating clients.
pub fn scaffold_server_update(c: &mut Option<ParamVector>, deltas: &[&ParamVector]) -> Result<()> {
    if deltas.is_empty() {
        return Ok(());
    }
    let dim = deltas[0].len();
    let cur = c.get_or_insert_with(|| ParamVector::zeros(dim));
    let inv = 1.0 / deltas.len() as f64;
    for d in deltas {
        check_len(dim, d.len())?;
        cur.axpy(inv, d)?;
    }
    Ok(())
}
