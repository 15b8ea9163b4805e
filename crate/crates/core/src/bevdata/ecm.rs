//! First-order equivalent-circuit cell model (open-circuit voltage, series
//! resistance, one RC pair) with Coulomb-counted state of charge.
//!
//! Positive current discharges the cell. Pack quantities scale the cell by
//! `n_s` in series and `n_p` in parallel.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Piecewise-linear lookup over state of charge, clamped at the ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub soc: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn new(soc: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let c = Self { soc, values };
        c.validate()?;
        Ok(c)
    }

    /// Eleven evenly spaced knots on `[0, 1]`.
    pub fn eleven_knots(values: [f64; 11]) -> Self {
        Self { soc: (0..11).map(|i| i as f64 / 10.0).collect(), values: values.to_vec() }
    }

    pub fn constant(value: f64) -> Self {
        Self { soc: vec![0.0, 1.0], values: vec![value, value] }
    }

    fn validate(&self) -> Result<()> {
        check_len(self.soc.len(), self.values.len())?;
        if self.soc.len() < 2 {
            return Err(Error::Config("lookup curve needs at least two knots".into()));
        }
        if self.soc.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("lookup curve knots must be strictly increasing".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("lookup curve values must be finite".into()));
        }
        Ok(())
    }

    pub fn eval(&self, soc: f64) -> f64 {
        let n = self.soc.len();
        if soc <= self.soc[0] {
            return self.values[0];
        }
        if soc >= self.soc[n - 1] {
            return self.values[n - 1];
        }
        let hi = self.soc.partition_point(|&k| k <= soc).min(n - 1);
        let lo = hi - 1;
        let w = (soc - self.soc[lo]) / (self.soc[hi] - self.soc[lo]);
        self.values[lo] + w * (self.values[hi] - self.values[lo])
    }

    fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcmParams {
    /// Cell capacity in ampere-hours.
    pub q_cell_ah: f64,
    pub v_oc: Curve,
    pub r0: Curve,
    pub r1: Curve,
    pub c1: Curve,
    pub n_s: usize,
    pub n_p: usize,
    pub soc0: f64,
}

impl Default for EcmParams {
    fn default() -> Self {
        Self {
            q_cell_ah: 3.2,
            v_oc: Curve::eleven_knots([3.00, 3.45, 3.55, 3.62, 3.68, 3.75, 3.83, 3.92, 4.00, 4.08, 4.18]),
            r0: Curve::eleven_knots([0.032, 0.027, 0.024, 0.022, 0.021, 0.020, 0.020, 0.020, 0.021, 0.021, 0.022]),
            r1: Curve::eleven_knots([0.016, 0.014, 0.013, 0.012, 0.011, 0.011, 0.011, 0.011, 0.012, 0.012, 0.013]),
            c1: Curve::eleven_knots([1800.0, 2100.0, 2400.0, 2600.0, 2700.0, 2800.0, 2800.0, 2800.0, 2700.0, 2600.0, 2500.0]),
            n_s: 96,
            n_p: 25,
            soc0: 0.9,
        }
    }
}

impl EcmParams {
    pub fn validate(&self) -> Result<()> {
        for c in [&self.v_oc, &self.r0, &self.r1, &self.c1] {
            c.validate()?;
        }
        if !(self.q_cell_ah > 0.0) {
            return Err(Error::Config(format!("cell capacity must be positive, got {}", self.q_cell_ah)));
        }
        if self.r0.min_value() <= 0.0 || self.r1.min_value() <= 0.0 || self.c1.min_value() <= 0.0 {
            return Err(Error::Config("ECM resistances and capacitance must be positive".into()));
        }
        if self.v_oc.values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("open-circuit voltage must be non-decreasing in SoC".into()));
        }
        if self.n_s == 0 || self.n_p == 0 {
            return Err(Error::Config("series and parallel cell counts must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.soc0) {
            return Err(Error::Config(format!("initial SoC must lie in [0, 1], got {}", self.soc0)));
        }
        Ok(())
    }

    pub fn cells(&self) -> f64 {
        (self.n_s * self.n_p) as f64
    }

    pub fn initial_state(&self) -> EcmState {
        EcmState { soc: self.soc0, v1: 0.0 }
    }

    /// `V_oc(SoC) − V1 − R0·I`
    pub fn terminal_voltage(&self, state: &EcmState, current: f64) -> f64 {
        self.v_oc.eval(state.soc) - state.v1 - self.r0.eval(state.soc) * current
    }

    /// Cell current that delivers `p_pack_w` at the pack terminals, from
    /// `R0·I² − (V_oc − V1)·I + P_cell = 0`. Demands beyond the maximum
    /// transferable power are capped at that maximum.
    pub fn current_for_pack_power(&self, state: &EcmState, p_pack_w: f64) -> f64 {
        let p_cell = p_pack_w / self.cells();
        let e = self.v_oc.eval(state.soc) - state.v1;
        let r0 = self.r0.eval(state.soc);
        let disc = e * e - 4.0 * r0 * p_cell;
        if disc <= 0.0 {
            return e / (2.0 * r0);
        }
        // Numerically stable small root.
        2.0 * p_cell / (e + disc.sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EcmState {
    pub soc: f64,
    pub v1: f64,
}

/// One integration step. State fields are the values used to evaluate the
/// terminal voltage, before the Euler update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EcmStep {
    pub current: f64,
    pub v_cell: f64,
    pub soc: f64,
    pub v1: f64,
    pub p_pack: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EcmTrace {
    pub steps: Vec<EcmStep>,
    pub final_state: EcmState,
    /// Number of steps where SoC had to be clamped into `[0, 1]`.
    pub clamped_steps: usize,
}

/// Evaluates the outputs at the current state, then advances the state by
/// forward Euler. Returns the step and whether SoC was clamped.
pub fn ecm_step(params: &EcmParams, state: &mut EcmState, current: f64, dt: f64) -> (EcmStep, bool) {
    let v_cell = params.terminal_voltage(state, current);
    let step = EcmStep {
        current,
        v_cell,
        soc: state.soc,
        v1: state.v1,
        p_pack: (params.n_s as f64 * v_cell) * (params.n_p as f64 * current),
    };
    let r1 = params.r1.eval(state.soc);
    let c1 = params.c1.eval(state.soc);
    let soc = state.soc - current * dt / (params.q_cell_ah * 3600.0);
    state.v1 += dt * (current - state.v1 / r1) / c1;
    state.soc = soc.clamp(0.0, 1.0);
    (step, state.soc != soc)
}

/// Runs a cell-current profile through the model.
pub fn ecm_simulate(params: &EcmParams, current_profile: &[f64], dt: f64) -> Result<EcmTrace> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    params.validate()?;
    let mut state = params.initial_state();
    let mut clamped = 0;
    let steps = current_profile
        .iter()
        .map(|&i| {
            let (s, c) = ecm_step(params, &mut state, i, dt);
            clamped += usize::from(c);
            s
        })
        .collect();
    if clamped > 0 {
        log::warn!("state of charge clamped to [0, 1] on {clamped} steps");
    }
    Ok(EcmTrace { steps, final_state: state, clamped_steps: clamped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed_rc() -> EcmParams {
        EcmParams {
            q_cell_ah: 2.0,
            v_oc: Curve::constant(3.7),
            r0: Curve::constant(0.02),
            r1: Curve::constant(0.01),
            c1: Curve::constant(2000.0),
            n_s: 1,
            n_p: 1,
            soc0: 0.8,
        }
    }

    #[test]
    fn zero_current_keeps_soc_and_relaxes() {
        let p = EcmParams::default();
        let mut st = EcmState { soc: 0.55, v1: 0.05 };
        let soc0 = st.soc;
        let mut last = None;
        for _ in 0..2000 {
            last = Some(ecm_step(&p, &mut st, 0.0, 1.0).0);
        }
        assert_eq!(st.soc, soc0);
        assert!(st.v1.abs() < 1e-6);
        let last = last.unwrap();
        assert!((last.v_cell - p.v_oc.eval(soc0)).abs() < 1e-6);
        let trace = ecm_simulate(&p, &vec![0.0; 100], 1.0).unwrap();
        assert!(trace.steps.iter().all(|s| s.soc == p.soc0));
    }

    #[test]
    fn coulomb_counting() {
        let p = EcmParams { soc0: 0.9, ..fixed_rc() };
        let trace = ecm_simulate(&p, &vec![1.0; 3600], 1.0).unwrap();
        assert!((trace.final_state.soc - 0.4).abs() < 1e-12);
    }

    #[test]
    fn rc_step_response_matches_closed_form() {
        let p = fixed_rc();
        let tau = 0.01 * 2000.0;
        let dt = tau / 100.0;
        let current = 5.0;
        let trace = ecm_simulate(&p, &vec![current; 1000], dt).unwrap();
        // steps[r].v1 is the state after r updates, i.e. at time r·dt.
        for (r, s) in trace.steps.iter().enumerate().skip(1) {
            let t = r as f64 * dt;
            let analytic = current * 0.01 * (1.0 - (-t / tau).exp());
            assert!(((s.v1 - analytic) / analytic).abs() < 0.01, "r={r}");
        }
    }

    #[test]
    fn soc_clamps_and_is_monotone_under_discharge() {
        let p = EcmParams { soc0: 0.01, ..fixed_rc() };
        let trace = ecm_simulate(&p, &vec![20.0; 100], 1.0).unwrap();
        assert!(trace.clamped_steps > 0);
        assert!(trace.steps.iter().all(|s| (0.0..=1.0).contains(&s.soc)));
        assert!(trace.steps.windows(2).all(|w| w[1].soc <= w[0].soc));
        assert_eq!(trace.final_state.soc, 0.0);
    }

    #[test]
    fn pack_power_scaling() {
        let p = EcmParams { n_s: 96, n_p: 3, ..fixed_rc() };
        let mut st = p.initial_state();
        let (s, _) = ecm_step(&p, &mut st, 2.0, 1.0);
        assert!((s.p_pack - 96.0 * s.v_cell * 3.0 * 2.0).abs() < 1e-9);
    }

    #[test]
    fn power_inversion_recovers_demand() {
        let p = EcmParams::default();
        let st = EcmState { soc: 0.6, v1: 0.01 };
        for demand in [-30_000.0, -10.0, 0.0, 700.0, 25_000.0] {
            let i = p.current_for_pack_power(&st, demand);
            let v = p.terminal_voltage(&st, i);
            let delivered = p.n_s as f64 * v * p.n_p as f64 * i;
            assert!((delivered - demand).abs() <= 1e-9 * demand.abs().max(1.0), "{demand}: {delivered}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ecm_simulate(&fixed_rc(), &[1.0], 0.0).is_err());
        let bad = EcmParams { r0: Curve::constant(-0.1), ..fixed_rc() };
        assert!(bad.validate().is_err());
        let bad = EcmParams { v_oc: Curve::new(vec![0.0, 1.0], vec![4.0, 3.0]).unwrap(), ..fixed_rc() };
        assert!(bad.validate().is_err());
        assert!(Curve::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn curve_interpolation() {
        let c = Curve::new(vec![0.0, 0.5, 1.0], vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(c.eval(-1.0), 1.0);
        assert_eq!(c.eval(0.25), 1.5);
        assert_eq!(c.eval(0.5), 2.0);
        assert_eq!(c.eval(0.75), 3.0);
        assert_eq!(c.eval(2.0), 4.0);
    }
}
