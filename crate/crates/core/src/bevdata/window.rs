use super::{TripSample, TripTrace};
use crate::error::{Error, Result};
use crate::model::Sample;

/// Per-sample energy in Wh: `P · dt / 3600`.
pub fn energy_increments(p_pack_w: &[f64], dt_s: f64) -> Result<Vec<f64>> {
    if !(dt_s > 0.0) {
        return Err(Error::Domain(format!("time step must be positive, got {dt_s}")));
    }
    Ok(p_pack_w.iter().map(|p| p * dt_s / 3600.0).collect())
}

/// Maps one telemetry record to a feature row.
pub trait FeatureExtractor: Sync {
    fn dim(&self) -> usize;
    fn extract(&self, sample: &TripSample, out: &mut Vec<f64>);
}

/// Speed, acceleration, grade, ambient temperature and auxiliary load.
#[derive(Clone, Copy, Debug, Default)]
pub struct StandardFeatures;

impl FeatureExtractor for StandardFeatures {
    fn dim(&self) -> usize {
        5
    }

    fn extract(&self, s: &TripSample, out: &mut Vec<f64>) {
        out.extend([s.speed_mps, s.accel_mps2, s.grade_rad, s.ambient_c, s.aux_w]);
    }
}

/// Stride-1 windows of `l_win` steps. The input is the flattened feature
/// rows of the window, the label is the window's summed energy in Wh.
/// Trips shorter than the window yield nothing.
pub fn make_windows(trip: &TripTrace, features: &dyn FeatureExtractor, l_win: usize) -> Result<Vec<Sample>> {
    if l_win == 0 {
        return Err(Error::Config("window length must be >= 1".into()));
    }
    if trip.len() < l_win {
        log::debug!("trip {} shorter than window ({} < {l_win})", trip.trip_id, trip.len());
        return Ok(Vec::new());
    }
    let energy = energy_increments(&trip.pack_power(), trip.dt_s)?;
    let mut rows = Vec::with_capacity(trip.len() * features.dim());
    for s in &trip.samples {
        features.extract(s, &mut rows);
    }
    let d = features.dim();
    Ok((l_win..=trip.len())
        .map(|end| {
            let start = end - l_win;
            Sample::new(rows[start * d..end * d].to_vec(), energy[start..end].iter().sum())
        })
        .collect())
}
