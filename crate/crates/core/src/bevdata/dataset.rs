//! Trip-disjoint train/val/test splits with per-client z-score
//! normalization fitted on the training split.

use serde::{Deserialize, Serialize};

use super::window::{make_windows, FeatureExtractor};
use super::TripTrace;
use crate::error::{Error, Result};
use crate::model::Sample;
use crate::numerics::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1, test: 0.2 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(*p >= 0.0)) || self.train <= 0.0 || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must be non-negative, train > 0, and sum to 1: {self:?}")));
        }
        Ok(())
    }
}

/// Trip counts `(train, val, test)` for `n` trips. With three or more trips
/// each split receives at least one trip (when its ratio is non-zero);
/// fewer than three trips all go to training.
pub fn split_counts(n: usize, ratios: &SplitRatios) -> (usize, usize, usize) {
    if n < 3 {
        return (n, 0, 0);
    }
    let at_least_one = |r: f64| if r > 0.0 { ((r * n as f64).round() as usize).max(1) } else { 0 };
    let test = at_least_one(ratios.test);
    let val = at_least_one(ratios.val);
    (n - val - test, val, test)
}

/// Trip ids per split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    /// Shuffles trip ids and partitions them by `ratios`.
    pub fn draw(trip_ids: &[String], ratios: &SplitRatios, rng: &mut RngStream) -> Self {
        let mut ids = trip_ids.to_vec();
        if ids.len() < 3 {
            log::warn!("{} trips cannot be split three ways; using all for training", ids.len());
            return Self { train: ids, ..Self::default() };
        }
        rng.shuffle(&mut ids);
        let (n_train, n_val, _) = split_counts(ids.len(), ratios);
        let test = ids.split_off(n_train + n_val);
        let val = ids.split_off(n_train);
        Self { train: ids, val, test }
    }

    pub fn is_disjoint(&self) -> bool {
        let mut all: Vec<&String> = self.train.iter().chain(&self.val).chain(&self.test).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        all.len() == n
    }
}

/// Per-coordinate affine map `(v − mean) / scale`. Zero-variance
/// coordinates get scale 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Fits on rows of width `dim` laid out contiguously.
    pub fn fit(rows: &[f64], dim: usize) -> Self {
        let n = rows.len() / dim.max(1);
        if n == 0 {
            return Self::identity(dim);
        }
        let mut mean = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        // A spread at rounding level (relative to the mean) counts as constant.
        let scale = var
            .into_iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-9 * m.abs().max(1.0) { sd } else { 1.0 }
            })
            .collect();
        Self { mean, scale }
    }

    /// Applies the map to a flattened window whose rows have width `dim`.
    pub fn apply_rows(&self, x: &mut [f64]) {
        let d = self.mean.len();
        for row in x.chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean[0]) / self.scale[0]
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.scale[0] + self.mean[0]
    }
}

/// One client's windows, split by trip, normalized with training statistics.
/// Inputs are z-scored per feature; labels are standardized and can be
/// mapped back to Wh with [`ClientDataset::label_to_wh`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub features: Standardizer,
    pub labels: Standardizer,
    pub split: SplitAssignment,
    /// Median absolute training label in Wh.
    pub median_abs_label_wh: f64,
}

impl ClientDataset {
    /// Training set size `n_k`.
    pub fn n_k(&self) -> usize {
        self.train.len()
    }

    pub fn label_to_wh(&self, y: f64) -> f64 {
        self.labels.inverse(y)
    }

    /// `1e-3 · median |y|` on the training labels (Wh), or `1e-3` when that
    /// median is zero.
    pub fn default_eps_y(&self) -> f64 {
        let e = 1e-3 * self.median_abs_label_wh;
        if e > 0.0 { e } else { 1e-3 }
    }

    /// Builds a dataset directly from already-normalized samples.
    pub fn from_samples(client_id: usize, train: Vec<Sample>, val: Vec<Sample>, test: Vec<Sample>) -> Self {
        let dim = train.first().or(test.first()).map_or(1, |s| s.x.len());
        Self {
            client_id,
            train,
            val,
            test,
            features: Standardizer::identity(dim),
            labels: Standardizer::identity(1),
            split: SplitAssignment::default(),
            median_abs_label_wh: 1.0,
        }
    }
}

fn windows_for(trips: &[&TripTrace], features: &dyn FeatureExtractor, l_win: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for t in trips {
        out.extend(make_windows(t, features, l_win)?);
    }
    Ok(out)
}

/// Builds a client dataset from an explicit trip assignment.
pub fn build_client_dataset(
    client_id: usize,
    trips: &[TripTrace],
    split: SplitAssignment,
    features: &dyn FeatureExtractor,
    l_win: usize,
) -> Result<ClientDataset> {
    if !split.is_disjoint() {
        return Err(Error::Data(format!("client {client_id}: split assignment reuses a trip id")));
    }
    let pick = |ids: &[String]| -> Result<Vec<&TripTrace>> {
        ids.iter()
            .map(|id| {
                trips
                    .iter()
                    .find(|t| &t.trip_id == id)
                    .ok_or_else(|| Error::Data(format!("client {client_id}: trip `{id}` not found")))
            })
            .collect()
    };
    let (train_trips, val_trips, test_trips) = (pick(&split.train)?, pick(&split.val)?, pick(&split.test)?);

    let d = features.dim();
    let mut rows = Vec::new();
    for t in &train_trips {
        for s in &t.samples {
            features.extract(s, &mut rows);
        }
    }
    let feat = Standardizer::fit(&rows, d);

    let mut train = windows_for(&train_trips, features, l_win)?;
    let mut val = windows_for(&val_trips, features, l_win)?;
    let mut test = windows_for(&test_trips, features, l_win)?;

    let raw_labels: Vec<f64> = train.iter().map(|s| s.y).collect();
    let labels = Standardizer::fit(&raw_labels, 1);
    let mut abs: Vec<f64> = raw_labels.iter().map(|y| y.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let median_abs_label_wh = match abs.len() {
        0 => 0.0,
        n if n % 2 == 1 => abs[n / 2],
        n => 0.5 * (abs[n / 2 - 1] + abs[n / 2]),
    };

    for s in train.iter_mut().chain(val.iter_mut()).chain(test.iter_mut()) {
        feat.apply_rows(&mut s.x);
        s.y = labels.forward(s.y);
    }
    Ok(ClientDataset { client_id, train, val, test, features: feat, labels, split, median_abs_label_wh })
}

/// Trip-level shuffle and partition followed by normalization.
pub fn split_and_normalize(
    client_id: usize,
    trips: &[TripTrace],
    ratios: &SplitRatios,
    features: &dyn FeatureExtractor,
    l_win: usize,
    rng: &mut RngStream,
) -> Result<ClientDataset> {
    ratios.validate()?;
    let ids: Vec<String> = trips.iter().map(|t| t.trip_id.clone()).collect();
    let split = SplitAssignment::draw(&ids, ratios, rng);
    build_client_dataset(client_id, trips, split, features, l_win)
}
