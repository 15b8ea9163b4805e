use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{RoughnessConfig, SpectralConfig};
use crate::error::{Error, Result};
use crate::fracopt::FracConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    FedAvg,
    FedProx,
    #[serde(rename = "SCAFFOLD")]
    Scaffold,
    FedNova,
    FedAdam,
    #[serde(rename = "RI-FedAvg")]
    RiFedAvg,
    #[serde(rename = "FO-FedAvg")]
    FoFedAvg,
    #[serde(rename = "FO-RI-FedAvg")]
    FoRiFedAvg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::FedAvg,
        Algorithm::FedProx,
        Algorithm::Scaffold,
        Algorithm::FedNova,
        Algorithm::FedAdam,
        Algorithm::RiFedAvg,
        Algorithm::FoFedAvg,
        Algorithm::FoRiFedAvg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "FedAvg",
            Algorithm::FedProx => "FedProx",
            Algorithm::Scaffold => "SCAFFOLD",
            Algorithm::FedNova => "FedNova",
            Algorithm::FedAdam => "FedAdam",
            Algorithm::RiFedAvg => "RI-FedAvg",
            Algorithm::FoFedAvg => "FO-FedAvg",
            Algorithm::FoRiFedAvg => "FO-RI-FedAvg",
        }
    }

    /// Whether local steps use the fractional preconditioner.
    pub fn fractional(self) -> bool {
        matches!(self, Algorithm::FoFedAvg | Algorithm::FoRiFedAvg)
    }

    /// Whether the proximal pull is scaled by the roughness response.
    pub fn roughness_controlled(self) -> bool {
        matches!(self, Algorithm::RiFedAvg | Algorithm::FoRiFedAvg)
    }

    /// Whether the spectral gate may act (it scales the preconditioner).
    pub fn preconditioned(self) -> bool {
        matches!(self, Algorithm::RiFedAvg | Algorithm::FoFedAvg | Algorithm::FoRiFedAvg)
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|a| a.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`; valid names: {}", Self::valid_names())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `η₀ / √(t + 1)`
    #[default]
    InvSqrt,
}

impl LrSchedule {
    pub fn rate(self, eta0: f64, round: usize) -> f64 {
        match self {
            LrSchedule::Constant => eta0,
            LrSchedule::InvSqrt => eta0 / ((round + 1) as f64).sqrt(),
        }
    }
}

/// Amount of local work per round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalWork {
    /// Fixed number of local steps `H`.
    Steps(usize),
    /// Local epochs `E`; a client runs `⌈E·n_k / B⌉` steps.
    Epochs(f64),
}

impl LocalWork {
    pub fn steps_for(self, n_k: usize, batch: usize) -> usize {
        match self {
            LocalWork::Steps(h) => h,
            LocalWork::Epochs(e) => ((e * n_k as f64 / batch as f64).ceil() as usize).max(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedAdamConfig {
    pub server_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for FedAdamConfig {
    fn default() -> Self {
        Self { server_lr: 0.01, beta1: 0.9, beta2: 0.99, eps: 1e-3 }
    }
}

/// Two-state availability chain per client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChurnConfig {
    pub p_leave: f64,
    pub p_join: f64,
    pub initial_available_fraction: f64,
}

impl Default for ChurnConfig {
    fn default() -> Self {
        Self { p_leave: 0.0, p_join: 0.0, initial_available_fraction: 1.0 }
    }
}

impl ChurnConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_leave", self.p_leave), ("p_join", self.p_join)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        let f = self.initial_available_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("initial_available_fraction must lie in (0, 1], got {f}")));
        }
        Ok(())
    }

    /// Long-run available fraction `p_join / (p_join + p_leave)`.
    pub fn stationary_availability(&self) -> Option<f64> {
        let s = self.p_join + self.p_leave;
        (s > 0.0).then(|| self.p_join / s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub clients: usize,
    pub participation: f64,
    pub rounds: usize,
    pub local_work: LocalWork,
    pub batch_size: usize,
    pub eta0: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    /// Base proximal strength (constant across rounds).
    pub lambda: f64,
    /// Saturation constant of `r(I) = I / (I + τ_I)`.
    pub tau_i: f64,
    pub frac: FracConfig,
    pub roughness: RoughnessConfig,
    pub spectral: SpectralConfig,
    /// Recompute roughness every this many rounds; reuse the cache otherwise.
    pub probe_every: usize,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub fedprox_mu: f64,
    #[serde(default)]
    pub fedadam: FedAdamConfig,
    #[serde(default)]
    pub churn: ChurnConfig,
    pub hidden_dims: Vec<usize>,
    /// Also probe roughness for algorithms that do not use it (logging only).
    #[serde(default)]
    pub diagnose_all: bool,
    pub seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            clients: 100,
            participation: 0.3,
            rounds: 300,
            local_work: LocalWork::Epochs(1.0),
            batch_size: 64,
            eta0: 0.05,
            lr_schedule: LrSchedule::InvSqrt,
            lambda: 0.1,
            tau_i: 0.5,
            frac: FracConfig::default(),
            roughness: RoughnessConfig::default(),
            spectral: SpectralConfig::default(),
            probe_every: 5,
            algorithm: Algorithm::FoRiFedAvg,
            fedprox_mu: 0.01,
            fedadam: FedAdamConfig::default(),
            churn: ChurnConfig::default(),
            hidden_dims: vec![64, 32],
            diagnose_all: false,
            seed: 1,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.clients == 0 {
            return fail("clients must be >= 1".into());
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return fail(format!("participation must lie in (0, 1], got {}", self.participation));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        match self.local_work {
            LocalWork::Steps(0) => return fail("local steps must be >= 1".into()),
            LocalWork::Epochs(e) if !(e > 0.0 && e.is_finite()) => {
                return fail(format!("local epochs must be positive, got {e}"))
            }
            _ => {}
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return fail(format!("eta0 must be positive, got {}", self.eta0));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.tau_i > 0.0) {
            return fail(format!("tau_i must be positive, got {}", self.tau_i));
        }
        if self.probe_every == 0 {
            return fail("probe_every must be >= 1".into());
        }
        if !(self.fedprox_mu >= 0.0) {
            return fail(format!("fedprox_mu must be >= 0, got {}", self.fedprox_mu));
        }
        let a = &self.fedadam;
        if !(a.server_lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return fail(format!("invalid FedAdam settings {a:?}"));
        }
        if self.hidden_dims.contains(&0) {
            return fail("hidden layer widths must be positive".into());
        }
        self.frac.validate()?;
        self.roughness.validate()?;
        self.spectral.validate()?;
        self.churn.validate()
    }

    pub fn eta(&self, round: usize) -> f64 {
        self.lr_schedule.rate(self.eta0, round)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.name()));
        }
        let err = "FedFoo".parse::<Algorithm>().unwrap_err().to_string();
        assert!(err.contains("FO-RI-FedAvg") && err.contains("SCAFFOLD"));
    }

    #[test]
    fn schedules() {
        assert_eq!(LrSchedule::Constant.rate(0.05, 9), 0.05);
        assert!((LrSchedule::InvSqrt.rate(0.05, 3) - 0.025).abs() < 1e-15);
        assert_eq!(LocalWork::Epochs(1.0).steps_for(130, 64), 3);
        assert_eq!(LocalWork::Epochs(1.0).steps_for(10, 64), 1);
        assert_eq!(LocalWork::Steps(7).steps_for(1000, 64), 7);
    }

    #[test]
    fn defaults_validate_and_reject() {
        assert!(FedConfig::default().validate().is_ok());
        assert!(FedConfig { participation: 0.0, ..FedConfig::default() }.validate().is_err());
        assert!(FedConfig { probe_every: 0, ..FedConfig::default() }.validate().is_err());
        let churn = ChurnConfig { p_leave: 1.5, ..ChurnConfig::default() };
        assert!(FedConfig { churn, ..FedConfig::default() }.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = FedConfig { local_work: LocalWork::Steps(4), algorithm: Algorithm::Scaffold, ..FedConfig::default() };
        let back: FedConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
