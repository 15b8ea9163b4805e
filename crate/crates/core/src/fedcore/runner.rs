use rayon::prelude::*;

use crate::bevdata::ClientDataset;
use crate::error::{Error, Result};
use crate::metrics::{combine, ErrorSums, EvalSplit, MetricConfig, MetricSnapshot, RoundAudit, RoundRecord};
use crate::model::{MlpModel, MlpSpec};
use crate::numerics::{ParamVector, Purpose, RngStream, SERVER};

use super::client::{client_round, ClientState, ClientUpdate, RoundContext};
use super::config::{Algorithm, FedConfig};
use super::server::{
    advance_churn, aggregate, fedadam_update, fednova_aggregate, initial_availability, sample_participants,
    scaffold_server_update, ServerState,
};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Keep broadcast and client vectors in each record.
    pub audit: bool,
    /// Start from these parameters instead of a fresh initialization.
    pub initial_params: Option<ParamVector>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub final_params: ParamVector,
    pub records: Vec<RoundRecord>,
    pub spec: MlpSpec,
}

/// Builds the model implied by `cfg` and the data dimension.
pub fn model_for(cfg: &FedConfig, data: &[ClientDataset]) -> Result<MlpModel> {
    let input_dim = data
        .iter()
        .flat_map(|d| d.train.iter().chain(&d.val).chain(&d.test))
        .map(|s| s.x.len())
        .next()
        .ok_or(Error::Empty("federated dataset"))?;
    MlpModel::new(MlpSpec { input_dim, hidden_dims: cfg.hidden_dims.clone(), bias: true })
}

/// Pooled (or averaged) Wh-scale metrics of `params` over every client's
/// evaluation split.
pub fn evaluate(model: &MlpModel, params: &ParamVector, data: &[ClientDataset], mcfg: &MetricConfig) -> Result<Option<MetricSnapshot>> {
    let sums: Vec<ErrorSums> = data
        .par_iter()
        .map(|d| {
            let set = match mcfg.eval_split {
                EvalSplit::Val => &d.val,
                EvalSplit::Test => &d.test,
            };
            if set.is_empty() {
                return Ok(ErrorSums::default());
            }
            let preds: Vec<f64> = model.predict(params, set)?.into_iter().map(|p| d.label_to_wh(p)).collect();
            let labels: Vec<f64> = set.iter().map(|s| d.label_to_wh(s.y)).collect();
            ErrorSums::accumulate(&preds, &labels, mcfg.eps_y.unwrap_or_else(|| d.default_eps_y()))
        })
        .collect::<Result<_>>()?;
    if sums.iter().all(|s| s.n == 0) {
        return Ok(None);
    }
    combine(&sums, mcfg.averaging).map(Some)
}

fn server_step(server: &mut ServerState, cfg: &FedConfig, updates: &[ClientUpdate]) -> Result<ParamVector> {
    let plain: Vec<(usize, usize, &ParamVector)> = updates.iter().map(|u| (u.client, u.n_k, &u.params)).collect();
    match cfg.algorithm {
        Algorithm::FedNova => {
            let with_tau: Vec<_> = updates.iter().map(|u| (u.client, u.n_k, &u.params, u.stat.local_steps)).collect();
            fednova_aggregate(&server.global, &with_tau)
        }
        Algorithm::FedAdam => {
            let avg = aggregate(&plain)?;
            fedadam_update(&server.global, &avg, &mut server.fedadam_moments, &cfg.fedadam)
        }
        Algorithm::Scaffold => {
            let deltas: Vec<&ParamVector> = updates.iter().filter_map(|u| u.control_delta.as_ref()).collect();
            scaffold_server_update(&mut server.scaffold_control, &deltas)?;
            aggregate(&plain)
        }
        _ => aggregate(&plain),
    }
}

/// Runs `cfg.rounds` rounds of federated training over `data`, one dataset
/// per client in id order.
pub fn run_experiment(cfg: &FedConfig, mcfg: &MetricConfig, data: &[ClientDataset], opts: &RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    mcfg.validate()?;
    if data.len() != cfg.clients {
        return Err(Error::Config(format!("expected {} client datasets, got {}", cfg.clients, data.len())));
    }
    if let Some((i, d)) = data.iter().enumerate().find(|(i, d)| d.client_id != *i) {
        return Err(Error::Data(format!("dataset at position {i} belongs to client {}", d.client_id)));
    }
    let model = model_for(cfg, data)?;
    let init = match &opts.initial_params {
        Some(p) if p.len() == model.num_params() => p.clone(),
        Some(p) => return Err(Error::LengthMismatch { expected: model.num_params(), actual: p.len() }),
        None => model.init_params(&mut RngStream::for_domain(cfg.seed, 0, SERVER, Purpose::ModelInit)),
    };
    let avail = initial_availability(cfg.clients, &cfg.churn, &mut RngStream::for_domain(cfg.seed, 0, SERVER, Purpose::ChurnInit));
    let mut server = ServerState::new(init, avail);
    let mut clients: Vec<ClientState<'_>> = data.iter().map(|d| ClientState::new(d, cfg)).collect();

    for t in 0..cfg.rounds {
        server.round = t;
        let mut prng = RngStream::for_domain(cfg.seed, t as u64, SERVER, Purpose::Participation);
        let selected = sample_participants(&mut server.availability, cfg.participation, &mut prng)?;
        let n_available = server.available_count();

        let ctx = RoundContext { round: t, global: &server.global, server_control: server.scaffold_control.as_ref() };
        let mut mask = vec![false; cfg.clients];
        selected.iter().for_each(|&k| mask[k] = true);
        let updates: Vec<ClientUpdate> = clients
            .par_iter_mut()
            .enumerate()
            .filter(|(k, _)| mask[*k])
            .map(|(_, st)| client_round(&model, st, ctx, cfg))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();

        let broadcast = opts.audit.then(|| server.global.clone());
        if !updates.is_empty() {
            let next = server_step(&mut server, cfg, &updates)?;
            next.ensure_finite("global model")?;
            server.global = next;
        }

        let last = t + 1 == cfg.rounds;
        let metrics = if (t + 1) % mcfg.eval_every == 0 || last {
            evaluate(&model, &server.global, data, mcfg)?
        } else {
            None
        };
        let record = RoundRecord {
            round: t,
            n_available,
            probe_round: t % cfg.probe_every == 0,
            train_seconds: updates.iter().map(|u| u.stat.train_seconds).sum(),
            diag_seconds: updates.iter().map(|u| u.stat.diag_seconds).sum(),
            audit: broadcast.map(|b| RoundAudit {
                broadcast: b,
                client_params: updates.iter().map(|u| (u.client, u.params.clone())).collect(),
            }),
            participants: updates.into_iter().map(|u| u.stat).collect(),
            metrics,
        };
        if let Some(m) = &record.metrics {
            log::info!("round {t}: {} clients, rmse {:.4} Wh", record.participants.len(), m.rmse);
        }
        server.round_log.push(record);

        let mut crng = RngStream::for_domain(cfg.seed, t as u64, SERVER, Purpose::Churn);
        advance_churn(&mut server.availability, &cfg.churn, &mut crng);
    }
    Ok(RunOutput { final_params: server.global, records: server.round_log, spec: model.spec().clone() })
}
