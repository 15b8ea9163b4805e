//! Fractional-order preconditioning of local SGD steps.
//!
//! The preconditioner scales each gradient coordinate by
//! `(|w_h − w_{h−1}| + δ)^(1−α) / Γ(2−α)`. At `α = 1` it is identically one,
//! which recovers plain SGD.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{gamma, ParamVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FracConfig {
    pub alpha: f64,
    pub delta: f64,
    pub clip_enabled: bool,
    pub p_min: f64,
    pub p_max: f64,
}

impl Default for FracConfig {
    fn default() -> Self {
        Self { alpha: 0.8, delta: 1e-6, clip_enabled: true, p_min: 0.2, p_max: 5.0 }
    }
}

impl FracConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.p_min > 0.0 && self.p_min <= self.p_max) {
            return Err(Error::Config(format!(
                "clip bounds need 0 < p_min <= p_max, got [{}, {}]",
                self.p_min, self.p_max
            )));
        }
        Ok(())
    }

    /// `1 / Γ(2 − α)`.
    pub fn gamma_factor(&self) -> Result<f64> {
        Ok(1.0 / gamma(2.0 - self.alpha)?)
    }
}

/// Per-client, per-round memory of the previous local iterate.
#[derive(Clone, Debug, Default)]
pub struct FracState {
    pub prev_params: Option<ParamVector>,
}

impl FracState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.prev_params = None;
    }
}

/// Raw fractional preconditioner, before any gating or clipping.
pub fn raw_preconditioner(state: &FracState, current: &ParamVector, cfg: &FracConfig) -> Result<ParamVector> {
    let Some(prev) = &state.prev_params else {
        return Ok(ParamVector::ones(current.len()));
    };
    check_len(current.len(), prev.len())?;
    if cfg.alpha == 1.0 {
        return Ok(ParamVector::ones(current.len()));
    }
    let scale = cfg.gamma_factor()?;
    let exponent = 1.0 - cfg.alpha;
    let p: Vec<f64> = current
        .iter()
        .zip(prev.iter())
        .map(|(w, w_prev)| scale * ((w - w_prev).abs() + cfg.delta).powf(exponent))
        .collect();
    let p = ParamVector::new(p);
    p.ensure_finite("preconditioner")?;
    Ok(p)
}

/// Clamps the preconditioner to `[p_min, p_max]` when clipping is enabled.
pub fn clip_preconditioner(p: ParamVector, cfg: &FracConfig) -> Result<ParamVector> {
    if cfg.clip_enabled {
        p.clip(cfg.p_min, cfg.p_max)
    } else {
        Ok(p)
    }
}

/// Fractional preconditioner with optional clipping. All ones at the first
/// local step (no previous iterate).
pub fn preconditioner(state: &FracState, current: &ParamVector, cfg: &FracConfig) -> Result<ParamVector> {
    clip_preconditioner(raw_preconditioner(state, current, cfg)?, cfg)
}

/// `params − eta · (grad ⊙ p)`
pub fn fo_step(params: &ParamVector, grad: &ParamVector, p: &ParamVector, eta: f64) -> Result<ParamVector> {
    check_len(params.len(), grad.len())?;
    check_len(params.len(), p.len())?;
    let out: Vec<f64> = params
        .iter()
        .zip(grad.iter())
        .zip(p.iter())
        .map(|((w, g), pp)| w - eta * (g * pp))
        .collect();
    let out = ParamVector::new(out);
    out.ensure_finite("fo_step")?;
    Ok(out)
}
