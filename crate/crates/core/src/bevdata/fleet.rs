//! Synthetic BEV fleets. Each client is one vehicle with its own mass, drag,
//! rolling resistance, auxiliary load, climate and driving-regime mix.
//! Drive cycles come from a Markov chain over urban, suburban and highway
//! regimes; longitudinal power demand is pushed through the battery model to
//! obtain pack power.

use serde::{Deserialize, Serialize};

use super::ecm::{ecm_step, EcmParams};
use super::{TripSample, TripTrace};
use crate::error::{Error, Result};
use crate::numerics::{Purpose, RngStream};

const GRAVITY: f64 = 9.81;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn check(&self, name: &str, positive: bool) -> Result<()> {
        let ok = self.min <= self.max && self.min.is_finite() && self.max.is_finite();
        if !ok || (positive && self.min <= 0.0) {
            return Err(Error::Config(format!("invalid range for {name}: [{}, {}]", self.min, self.max)));
        }
        Ok(())
    }

    /// Draw around the centre with half-width scaled by `spread ∈ [0, 1]`.
    fn draw(&self, rng: &mut RngStream, spread: f64) -> f64 {
        let centre = 0.5 * (self.min + self.max);
        centre + (rng.uniform() - 0.5) * (self.max - self.min) * spread
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Mild,
    #[default]
    Moderate,
    Severe,
}

impl Severity {
    fn level(self) -> f64 {
        match self {
            Severity::Mild => 0.3,
            Severity::Moderate => 0.6,
            Severity::Severe => 1.0,
        }
    }
}

/// Speed behaviour of one driving regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeProfile {
    pub mean_speed_mps: f64,
    /// Std of the slowly varying target speed.
    pub speed_std_mps: f64,
    pub accel_noise_mps2: f64,
    pub max_accel_mps2: f64,
    /// Probability per second of starting a stop.
    pub stop_rate_per_s: f64,
}

impl RegimeProfile {
    fn urban() -> Self {
        Self { mean_speed_mps: 9.0, speed_std_mps: 3.0, accel_noise_mps2: 0.4, max_accel_mps2: 2.5, stop_rate_per_s: 1.0 / 45.0 }
    }

    fn suburban() -> Self {
        Self { mean_speed_mps: 17.0, speed_std_mps: 3.5, accel_noise_mps2: 0.3, max_accel_mps2: 2.0, stop_rate_per_s: 1.0 / 150.0 }
    }

    fn highway() -> Self {
        Self { mean_speed_mps: 29.0, speed_std_mps: 3.0, accel_noise_mps2: 0.2, max_accel_mps2: 1.5, stop_rate_per_s: 0.0 }
    }

    /// A regime that never moves.
    pub fn parked() -> Self {
        Self { mean_speed_mps: 0.0, speed_std_mps: 0.0, accel_noise_mps2: 0.0, max_accel_mps2: 0.0, stop_rate_per_s: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub seed: u64,
    pub num_clients: usize,
    pub trips_per_client: usize,
    pub trip_duration_s: Range,
    pub dt_s: f64,
    #[serde(default)]
    pub heterogeneity: Severity,
    pub mass_kg: Range,
    pub cda_m2: Range,
    pub crr: Range,
    pub aux_w: Range,
    pub ambient_c: Range,
    /// Extra auxiliary load per degree away from 21 °C (climate control).
    pub hvac_w_per_c: f64,
    pub motor_eff: f64,
    pub regen_eff: f64,
    pub air_density: f64,
    /// Urban, suburban, highway.
    pub regimes: [RegimeProfile; 3],
    /// Mean regime dwell time in seconds.
    pub regime_dwell_s: f64,
    pub ecm: EcmParams,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            num_clients: 20,
            trips_per_client: 10,
            trip_duration_s: Range::new(300.0, 900.0),
            dt_s: 1.0,
            heterogeneity: Severity::Moderate,
            mass_kg: Range::new(1400.0, 2600.0),
            cda_m2: Range::new(0.55, 0.85),
            crr: Range::new(0.007, 0.013),
            aux_w: Range::new(200.0, 1200.0),
            ambient_c: Range::new(-5.0, 35.0),
            hvac_w_per_c: 60.0,
            motor_eff: 0.9,
            regen_eff: 0.65,
            air_density: 1.2,
            regimes: [RegimeProfile::urban(), RegimeProfile::suburban(), RegimeProfile::highway()],
            regime_dwell_s: 180.0,
            ecm: EcmParams::default(),
        }
    }
}

impl FleetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 || self.trips_per_client == 0 {
            return Err(Error::Config("fleet needs at least one client and one trip per client".into()));
        }
        if !(self.dt_s > 0.0) {
            return Err(Error::Config(format!("dt_s must be positive, got {}", self.dt_s)));
        }
        self.trip_duration_s.check("trip_duration_s", true)?;
        self.mass_kg.check("mass_kg", true)?;
        self.cda_m2.check("cda_m2", true)?;
        self.crr.check("crr", true)?;
        self.aux_w.check("aux_w", false)?;
        self.ambient_c.check("ambient_c", false)?;
        if self.aux_w.min < 0.0 || self.hvac_w_per_c < 0.0 {
            return Err(Error::Config("auxiliary loads must be non-negative".into()));
        }
        for (name, v) in [("motor_eff", self.motor_eff), ("regen_eff", self.regen_eff)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(self.air_density > 0.0) || !(self.regime_dwell_s > 0.0) {
            return Err(Error::Config("air_density and regime_dwell_s must be positive".into()));
        }
        for r in &self.regimes {
            let vals = [r.mean_speed_mps, r.speed_std_mps, r.accel_noise_mps2, r.max_accel_mps2, r.stop_rate_per_s];
            if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || r.stop_rate_per_s > 1.0 {
                return Err(Error::Config(format!("invalid regime profile {r:?}")));
            }
        }
        self.ecm.validate()
    }
}

/// Per-vehicle physical parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub mass_kg: f64,
    pub cda_m2: f64,
    pub crr: f64,
    pub aux_w: f64,
    pub ambient_c: f64,
    /// Stationary weights over (urban, suburban, highway).
    pub regime_mix: [f64; 3],
}

impl VehicleParams {
    fn sample(cfg: &FleetConfig, rng: &mut RngStream) -> Self {
        let s = cfg.heterogeneity.level();
        let dominant = rng.index(3);
        let mut regime_mix = [(1.0 - (1.0 / 3.0 + 2.0 / 3.0 * s)) / 2.0; 3];
        regime_mix[dominant] = 1.0 / 3.0 + 2.0 / 3.0 * s;
        Self {
            mass_kg: cfg.mass_kg.draw(rng, s),
            cda_m2: cfg.cda_m2.draw(rng, s),
            crr: cfg.crr.draw(rng, s),
            aux_w: cfg.aux_w.draw(rng, s),
            ambient_c: cfg.ambient_c.draw(rng, s),
            regime_mix,
        }
    }

    /// Wheel power `(m·a + ½ρ·CdA·v² + C_rr·m·g + m·g·sin θ)·v`.
    pub fn mechanical_power(&self, air_density: f64, speed: f64, accel: f64, grade: f64) -> f64 {
        let m = self.mass_kg;
        let force = m * accel
            + 0.5 * air_density * self.cda_m2 * speed * speed
            + self.crr * m * GRAVITY
            + m * GRAVITY * grade.sin();
        force * speed
    }
}

fn pick_regime(mix: &[f64; 3], rng: &mut RngStream) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, w) in mix.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    2
}

/// Generates one trip for `vehicle`.
pub fn synth_trip(cfg: &FleetConfig, vehicle: &VehicleParams, vehicle_id: &str, trip_id: &str, rng: &mut RngStream) -> TripTrace {
    let dt = cfg.dt_s;
    let duration = cfg.trip_duration_s.draw(rng, 1.0);
    let n = ((duration / dt).round() as usize).max(1);
    let ambient = vehicle.ambient_c + 2.0 * rng.normal();
    let aux = vehicle.aux_w + cfg.hvac_w_per_c * (ambient - 21.0).abs();

    let mut regime = pick_regime(&vehicle.regime_mix, rng);
    let mut target = cfg.regimes[regime].mean_speed_mps;
    let mut speed = 0.0f64;
    let mut grade = 0.0f64;
    let mut stop_left = 0.0f64;
    let mut battery = cfg.ecm.initial_state();
    let switch_p = (dt / cfg.regime_dwell_s).min(1.0);

    let mut samples = Vec::with_capacity(n);
    for r in 0..n {
        if rng.bernoulli(switch_p) {
            regime = pick_regime(&vehicle.regime_mix, rng);
        }
        let prof = &cfg.regimes[regime];
        // Target speed: mean-reverting around the regime mean.
        let theta = (dt / 30.0).min(1.0);
        target += theta * (prof.mean_speed_mps - target) + prof.speed_std_mps * (2.0 * theta).sqrt() * rng.normal();
        target = target.max(0.0);
        if stop_left <= 0.0 && rng.bernoulli(prof.stop_rate_per_s * dt) {
            stop_left = rng.uniform_range(10.0, 40.0);
        }
        let goal = if stop_left > 0.0 {
            stop_left -= dt;
            0.0
        } else {
            target
        };
        let accel_cmd = (0.4 * (goal - speed) + prof.accel_noise_mps2 * rng.normal())
            .clamp(-prof.max_accel_mps2 * 1.5, prof.max_accel_mps2);
        let next_speed = (speed + accel_cmd * dt).max(0.0);
        let accel = (next_speed - speed) / dt;

        grade += -0.02 * grade * dt + 0.002 * dt.sqrt() * rng.normal();
        grade = grade.clamp(-0.08, 0.08);

        let p_mech = vehicle.mechanical_power(cfg.air_density, speed, accel, grade);
        let p_elec = if p_mech >= 0.0 { p_mech / cfg.motor_eff } else { p_mech * cfg.regen_eff };
        let demand = p_elec + aux;
        let current = cfg.ecm.current_for_pack_power(&battery, demand);
        let (step, _) = ecm_step(&cfg.ecm, &mut battery, current, dt);

        samples.push(TripSample {
            t_s: r as f64 * dt,
            speed_mps: speed,
            accel_mps2: accel,
            grade_rad: grade,
            ambient_c: ambient,
            aux_w: aux,
            pack_power_w: step.p_pack,
        });
        speed = next_speed;
    }
    TripTrace { vehicle_id: vehicle_id.to_string(), trip_id: trip_id.to_string(), dt_s: dt, samples }
}

pub fn vehicle_id(client: usize) -> String {
    format!("v{client:03}")
}

/// Per-client trip lists and the vehicle parameters behind them.
pub fn synth_fleet(cfg: &FleetConfig) -> Result<Vec<(VehicleParams, Vec<TripTrace>)>> {
    cfg.validate()?;
    Ok((0..cfg.num_clients)
        .map(|k| {
            let mut vrng = RngStream::for_domain(cfg.seed, 0, k as u64, Purpose::Fleet);
            let vehicle = VehicleParams::sample(cfg, &mut vrng);
            let vid = vehicle_id(k);
            let trips = (0..cfg.trips_per_client)
                .map(|j| {
                    let mut rng = RngStream::for_domain(cfg.seed, 1 + j as u64, k as u64, Purpose::Fleet);
                    synth_trip(cfg, &vehicle, &vid, &format!("{vid}-t{j:03}"), &mut rng)
                })
                .collect();
            (vehicle, trips)
        })
        .collect())
}
