//! Federated orchestration: local training (fractional-order steps with a
//! roughness-scaled proximal pull), participation and churn, aggregation,
//! baseline algorithms and the round loop.

mod client;
mod config;
mod runner;
mod server;

pub use client::{client_round, proximal_gradient, roughness_response, ClientState, ClientUpdate, RoundContext};
pub use config::{Algorithm, ChurnConfig, FedAdamConfig, FedConfig, LocalWork, LrSchedule};
pub use runner::{evaluate, model_for, run_experiment, RunOptions, RunOutput};
pub use server::{
    advance_churn, aggregate, fedadam_update, fednova_aggregate, initial_availability, participant_count,
    sample_participants, scaffold_server_update, ServerState,
};

#[cfg(test)]
mod tests;
