//! Client-side stability signals: the roughness index computed from random
//! one-dimensional loss slices, and the spectral flatness ratio of a weight
//! matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mean, population_std, ParamVector, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoughnessConfig {
    /// Number of random directions.
    pub directions: usize,
    /// Probe radius in parameter units.
    pub radius: f64,
    /// Grid segments per slice; a slice has `segments + 1` points.
    pub segments: usize,
    pub probe_batch: usize,
    pub eps_a: f64,
    pub eps_t: f64,
}

impl Default for RoughnessConfig {
    fn default() -> Self {
        Self { directions: 10, radius: 0.01, segments: 100, probe_batch: 128, eps_a: 1e-8, eps_t: 1e-8 }
    }
}

impl RoughnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.directions == 0 || self.segments == 0 || self.probe_batch == 0 {
            return Err(Error::Config("roughness directions, segments and probe batch must be >= 1".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::Config(format!("probe radius must be positive, got {}", self.radius)));
        }
        if !(self.eps_a > 0.0 && self.eps_t > 0.0) {
            return Err(Error::Config("roughness stabilizers must be positive".into()));
        }
        Ok(())
    }

    /// Slice offsets `s_j = −ℓ + j·2ℓ/m`, `j = 0..=m`.
    pub fn grid(&self) -> Vec<f64> {
        let m = self.segments as f64;
        (0..=self.segments)
            .map(|j| -self.radius + j as f64 * 2.0 * self.radius / m)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    /// Gate strength; zero disables gating.
    pub beta_kappa: f64,
    pub eps_f: f64,
    pub power_iters: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { beta_kappa: 0.0, eps_f: 1e-8, power_iters: 10 }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_kappa >= 0.0) {
            return Err(Error::Config(format!("beta_kappa must be >= 0, got {}", self.beta_kappa)));
        }
        if !(self.eps_f > 0.0) || self.power_iters == 0 {
            return Err(Error::Config("eps_f must be positive and power_iters >= 1".into()));
        }
        Ok(())
    }
}

/// Normalized total variation of one sampled slice:
/// `TV / (2ℓ · (A + ε_A))`, where `A` is the slice amplitude.
pub fn normalized_total_variation(slice: &[f64], radius: f64, eps_a: f64) -> f64 {
    if slice.len() < 2 {
        return 0.0;
    }
    let tv: f64 = slice.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let (lo, hi) = slice
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    tv / (2.0 * radius * ((hi - lo) + eps_a))
}

/// Coefficient of variation `std(T) / (mean(T) + ε_T)` with population std.
pub fn coefficient_of_variation(values: &[f64], eps: f64) -> f64 {
    population_std(values) / (mean(values) + eps)
}

/// Roughness index from already-evaluated slices (one `Vec` per direction).
pub fn roughness_from_slices(slices: &[Vec<f64>], cfg: &RoughnessConfig) -> Result<f64> {
    if slices.is_empty() {
        return Err(Error::Empty("roughness slices"));
    }
    let t: Vec<f64> = slices
        .iter()
        .map(|s| normalized_total_variation(s, cfg.radius, cfg.eps_a))
        .collect();
    Ok(coefficient_of_variation(&t, cfg.eps_t))
}

/// Unit-norm Gaussian direction.
pub fn random_direction(dim: usize, rng: &mut RngStream) -> ParamVector {
    loop {
        let d: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return ParamVector::new(d.into_iter().map(|v| v / norm).collect());
        }
    }
}

/// Roughness index around `params`, with the slice loss supplied by
/// `loss_at`. Directions are drawn from `rng`.
pub fn roughness_index_with<F>(params: &ParamVector, cfg: &RoughnessConfig, rng: &mut RngStream, mut loss_at: F) -> Result<f64>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    let grid = cfg.grid();
    let mut slices = Vec::with_capacity(cfg.directions);
    let mut probe = params.clone();
    for _ in 0..cfg.directions {
        let d = random_direction(params.len(), rng);
        let mut slice = Vec::with_capacity(grid.len());
        for &s in &grid {
            for ((p, w), dv) in probe.as_mut_slice().iter_mut().zip(params.iter()).zip(d.iter()) {
                *p = w + s * dv;
            }
            slice.push(loss_at(&probe)?);
        }
        slices.push(slice);
    }
    roughness_from_slices(&slices, cfg)
}

/// Roughness index of a model's probe loss on `probe_batch`.
pub fn roughness_index(
    model: &crate::model::MlpModel,
    params: &ParamVector,
    probe_batch: &[crate::model::Sample],
    cfg: &RoughnessConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    if probe_batch.is_empty() {
        return Err(Error::Empty("probe batch"));
    }
    roughness_index_with(params, cfg, rng, |p| model.probe_loss(p, probe_batch))
}

/// Dense row-major matrix, just enough for spectral diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        crate::error::check_len(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { rows: n, cols: n, data }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn mul_vec(&self, v: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.data[r * self.cols..(r + 1) * self.cols].iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    fn tmul_vec(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &ur) in u.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(&self.data[r * self.cols..(r + 1) * self.cols]) {
                *o += a * ur;
            }
        }
    }
}

/// Largest singular value by power iteration on `WᵀW` from a fixed start
/// vector.
pub fn spectral_norm(w: &Matrix, iters: usize) -> f64 {
    if w.data.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    // Deterministic start with distinct coordinates so it is not orthogonal
    // to the leading singular vector in symmetric cases.
    let mut v: Vec<f64> = (0..w.cols).map(|i| 1.0 + (i as f64 + 1.0).sqrt() * 0.1).collect();
    normalize(&mut v);
    let mut u = vec![0.0; w.rows];
    let mut next = vec![0.0; w.cols];
    let mut sigma = 0.0;
    for _ in 0..iters {
        w.mul_vec(&v, &mut u);
        w.tmul_vec(&u, &mut next);
        let n = normalize(&mut next);
        if n == 0.0 {
            break;
        }
        std::mem::swap(&mut v, &mut next);
        w.mul_vec(&v, &mut u);
        sigma = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    sigma
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// `‖W‖₂ / (‖W‖_F + ε_F)`; zero for the zero matrix.
pub fn spectral_flatness(w: &Matrix, cfg: &SpectralConfig) -> f64 {
    let sigma = spectral_norm(w, cfg.power_iters);
    sigma / (w.frobenius() + cfg.eps_f)
}
