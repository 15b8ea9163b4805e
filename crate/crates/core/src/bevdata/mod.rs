//! Battery-electric-vehicle energy data: equivalent-circuit battery
//! simulation, synthetic fleets, telemetry CSV ingestion, energy-labelled
//! windows, and trip-disjoint per-client datasets.

mod dataset;
mod ecm;
mod fleet;
mod ingest;
mod window;

pub use dataset::{build_client_dataset, split_and_normalize, split_counts, ClientDataset, Standardizer, SplitAssignment, SplitRatios};
pub use ecm::{ecm_simulate, ecm_step, Curve, EcmParams, EcmState, EcmStep, EcmTrace};
pub use fleet::{synth_fleet, synth_trip, FleetConfig, Range, RegimeProfile, Severity, VehicleParams};
pub use ingest::{ingest_csv, ingest_reader, write_trips_csv, CsvSchema, IngestReport};
pub use window::{energy_increments, make_windows, FeatureExtractor, StandardFeatures};

use serde::{Deserialize, Serialize};

/// One uniformly sampled telemetry record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripSample {
    pub t_s: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
    pub grade_rad: f64,
    pub ambient_c: f64,
    pub aux_w: f64,
    pub pack_power_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripTrace {
    pub vehicle_id: String,
    pub trip_id: String,
    pub dt_s: f64,
    pub samples: Vec<TripSample>,
}

impl TripTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pack_power(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.pack_power_w).collect()
    }
}
