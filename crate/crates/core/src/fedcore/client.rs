use std::time::Instant;

use crate::bevdata::ClientDataset;
use crate::diagnostics::{roughness_index, spectral_flatness, Matrix};
use crate::error::{check_len, Error, Result};
use crate::fracopt::{clip_preconditioner, raw_preconditioner, fo_step, FracConfig, FracState};
use crate::metrics::ClientRoundStat;
use crate::model::{MlpModel, Sample};
use crate::numerics::{ParamVector, Purpose, RngStream};

use super::config::{Algorithm, FedConfig};

/// `base + λ·r·(w − w_t)`
pub fn proximal_gradient(base: &ParamVector, w: &ParamVector, w_t: &ParamVector, lambda_t: f64, r_of_i: f64) -> Result<ParamVector> {
    check_len(base.len(), w.len())?;
    check_len(base.len(), w_t.len())?;
    if !(lambda_t >= 0.0 && r_of_i >= 0.0) {
        return Err(Error::Domain(format!("proximal strength must be >= 0, got λ={lambda_t}, r={r_of_i}")));
    }
    let k = lambda_t * r_of_i;
    if k == 0.0 {
        return Ok(base.clone());
    }
    Ok(ParamVector::new(
        base.iter().zip(w.iter()).zip(w_t.iter()).map(|((g, a), b)| g + k * (a - b)).collect(),
    ))
}

/// `I / (I + τ_I)`
pub fn roughness_response(i_k: f64, tau_i: f64) -> f64 {
    i_k / (i_k + tau_i)
}

/// Per-client memory carried across rounds.
#[derive(Clone, Debug)]
pub struct ClientState<'a> {
    pub dataset: &'a ClientDataset,
    /// Fixed probe batch (indices into the training set).
    pub probe_indices: Vec<usize>,
    pub cached_roughness: Option<f64>,
    pub scaffold_control: Option<ParamVector>,
    pub local_step_counter: usize,
}

impl<'a> ClientState<'a> {
    pub fn new(dataset: &'a ClientDataset, cfg: &FedConfig) -> Self {
        let n = dataset.n_k();
        let mut rng = RngStream::for_domain(cfg.seed, 0, dataset.client_id as u64, Purpose::ProbeBatch);
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        idx.truncate(cfg.roughness.probe_batch.min(n));
        Self { dataset, probe_indices: idx, cached_roughness: None, scaffold_control: None, local_step_counter: 0 }
    }

    fn probe_batch(&self) -> Vec<Sample> {
        self.probe_indices.iter().map(|&i| self.dataset.train[i].clone()).collect()
    }
}

/// What a client sends back after local training.
#[derive(Clone, Debug)]
pub struct ClientUpdate {
    pub client: usize,
    pub n_k: usize,
    pub params: ParamVector,
    /// Change of the SCAFFOLD control variate, when applicable.
    pub control_delta: Option<ParamVector>,
    pub stat: ClientRoundStat,
}

/// Server-side values a client needs for one round.
#[derive(Clone, Copy, Debug)]
pub struct RoundContext<'b> {
    pub round: usize,
    pub global: &'b ParamVector,
    pub server_control: Option<&'b ParamVector>,
}

/// Mini-batch order for one round: reshuffled permutations of the local
/// training set, consumed in chunks of `batch`.
struct BatchCursor {
    rng: RngStream,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl BatchCursor {
    fn new(n: usize, batch: usize, rng: RngStream) -> Self {
        Self { rng, order: (0..n).collect(), pos: n, batch: batch.min(n) }
    }

    fn next(&mut self) -> &[usize] {
        if self.pos >= self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let s = self.pos;
        self.pos = end;
        &self.order[s..end]
    }
}

fn needs_roughness(cfg: &FedConfig) -> bool {
    cfg.algorithm.roughness_controlled() || cfg.diagnose_all
}

fn needs_kappa(cfg: &FedConfig) -> bool {
    (cfg.algorithm.preconditioned() && cfg.spectral.beta_kappa > 0.0) || cfg.diagnose_all
}

/// One round of local training on client `state`. Returns `None` (with a
/// warning) when the client holds no training data.
pub fn client_round(
    model: &MlpModel,
    state: &mut ClientState<'_>,
    ctx: RoundContext<'_>,
    cfg: &FedConfig,
) -> Result<Option<ClientUpdate>> {
    let ds = state.dataset;
    let k = ds.client_id;
    let n_k = ds.n_k();
    if n_k == 0 {
        log::warn!("client {k} has no training samples; skipped in round {}", ctx.round);
        return Ok(None);
    }
    let w_t = ctx.global;
    let alg = cfg.algorithm;

    let diag_start = Instant::now();
    let mut probed = false;
    if needs_roughness(cfg) && (ctx.round.is_multiple_of(cfg.probe_every) || state.cached_roughness.is_none()) {
        let mut rng = RngStream::for_domain(cfg.seed, ctx.round as u64, k as u64, Purpose::Probe);
        let i_k = roughness_index(model, w_t, &state.probe_batch(), &cfg.roughness, &mut rng)?;
        state.cached_roughness = Some(i_k);
        probed = true;
    }
    let kappa = if needs_kappa(cfg) {
        let (rows, cols, w) = model.final_layer_weights(w_t)?;
        Some(spectral_flatness(&Matrix::new(rows, cols, w.to_vec())?, &cfg.spectral))
    } else {
        None
    };
    let diag_seconds = if probed || kappa.is_some() { diag_start.elapsed().as_secs_f64() } else { 0.0 };

    let train_start = Instant::now();
    let eta = cfg.eta(ctx.round);
    let steps = cfg.local_work.steps_for(n_k, cfg.batch_size);
    let prox = match alg {
        Algorithm::FedProx => cfg.fedprox_mu,
        Algorithm::RiFedAvg | Algorithm::FoRiFedAvg => {
            let i_k = state.cached_roughness.ok_or(Error::Empty("roughness cache"))?;
            cfg.lambda * roughness_response(i_k, cfg.tau_i)
        }
        _ => 0.0,
    };
    let frac = FracConfig { alpha: if alg.fractional() { cfg.frac.alpha } else { 1.0 }, ..cfg.frac.clone() };
    let gate = match (alg.preconditioned(), kappa) {
        (true, Some(kap)) if cfg.spectral.beta_kappa > 0.0 => 1.0 / (1.0 + cfg.spectral.beta_kappa * kap),
        _ => 1.0,
    };
    let scaffold = if alg == Algorithm::Scaffold {
        let c = ctx.server_control.cloned().unwrap_or_else(|| ParamVector::zeros(w_t.len()));
        let c_k = state.scaffold_control.clone().unwrap_or_else(|| ParamVector::zeros(w_t.len()));
        Some((c.sub(&c_k)?, c, c_k))
    } else {
        None
    };

    let batch_rng = RngStream::for_domain(cfg.seed, ctx.round as u64, k as u64, Purpose::Batch);
    let mut cursor = BatchCursor::new(n_k, cfg.batch_size, batch_rng);
    let mut w = w_t.clone();
    let mut fstate = FracState::new();
    let mut last_loss = f64::NAN;
    for h in 0..steps {
        let (loss, base) = model.loss_and_grad_subset(&w, &ds.train, cursor.next())?;
        last_loss = loss;
        let mut g = proximal_gradient(&base, &w, w_t, prox, 1.0)?;
        if let Some((corr, _, _)) = &scaffold {
            g = g.add(corr)?;
        }
        let p = if h == 0 || !alg.preconditioned() {
            ParamVector::ones(w.len())
        } else {
            let mut p = raw_preconditioner(&fstate, &w, &frac)?;
            if gate != 1.0 {
                p = p.scale(gate);
            }
            clip_preconditioner(p, &frac)?
        };
        let next = fo_step(&w, &g, &p, eta)?;
        fstate.prev_params = Some(std::mem::replace(&mut w, next));
    }
    state.local_step_counter += steps;

    let control_delta = match scaffold {
        Some((_, c, c_k)) => {
            // Option II: c_k ← c_k − c + (w_t − w_out) / (H·η)
            let step = w_t.sub(&w)?.scale(1.0 / (steps as f64 * eta));
            let new_ck = c_k.sub(&c)?.add(&step)?;
            let delta = new_ck.sub(&c_k)?;
            state.scaffold_control = Some(new_ck);
            Some(delta)
        }
        None => None,
    };
    let train_seconds = train_start.elapsed().as_secs_f64();

    let stat = ClientRoundStat {
        client: k,
        n_k,
        drift: w.distance(w_t)?,
        roughness: state.cached_roughness,
        kappa,
        probed,
        local_steps: steps,
        final_loss: last_loss,
        train_seconds,
        diag_seconds,
    };
    Ok(Some(ClientUpdate { client: k, n_k, params: w, control_delta, stat }))
}
