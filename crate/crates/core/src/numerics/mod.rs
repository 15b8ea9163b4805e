//! Parameter-vector arithmetic, the Gamma function, counter-based random
//! streams and correlation statistics shared by every other module.

mod gamma;
mod rng;
mod stats;

pub use gamma::gamma;
pub use rng::{Domain, Purpose, RngStream, SERVER};
pub use stats::{mean, pearson, population_std, ranks, spearman};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Flat model parameter vector. The unit of aggregation, drift and
/// preconditioning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

/// Coordinate-wise operations accepted by [`elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementOp {
    Add,
    Sub,
    Mul,
    Abs,
    PowScalar(f64),
    Scale(f64),
    Clip { lo: f64, hi: f64 },
}

impl ElementOp {
    fn is_binary(self) -> bool {
        matches!(self, ElementOp::Add | ElementOp::Sub | ElementOp::Mul)
    }
}

/// Applies `op` coordinate-wise. Binary operations require `b`; unary
/// operations ignore it.
pub fn elementwise(a: &ParamVector, b: Option<&ParamVector>, op: ElementOp) -> Result<ParamVector> {
    if op.is_binary() {
        let b = b.ok_or_else(|| Error::Domain(format!("{op:?} needs a second operand")))?;
        return match op {
            ElementOp::Add => a.add(b),
            ElementOp::Sub => a.sub(b),
            _ => a.mul(b),
        };
    }
    let out = match op {
        ElementOp::Abs => a.abs(),
        ElementOp::PowScalar(e) => a.pow_scalar(e),
        ElementOp::Scale(c) => a.scale(c),
        ElementOp::Clip { lo, hi } => a.clip(lo, hi)?,
        _ => unreachable!(),
    };
    out.ensure_finite("elementwise")?;
    Ok(out)
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn ones(len: usize) -> Self {
        Self(vec![1.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    fn zip_with(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<ParamVector> {
        check_len(self.len(), other.len())?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect()))
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> ParamVector {
        Self(self.0.iter().map(|&a| f(a)).collect())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn abs(&self) -> ParamVector {
        self.map(f64::abs)
    }

    pub fn pow_scalar(&self, exponent: f64) -> ParamVector {
        self.map(|a| a.powf(exponent))
    }

    pub fn scale(&self, c: f64) -> ParamVector {
        self.map(|a| a * c)
    }

    pub fn clip(&self, lo: f64, hi: f64) -> Result<ParamVector> {
        if !(lo <= hi) {
            return Err(Error::Domain(format!("clip bounds out of order: [{lo}, {hi}]")));
        }
        Ok(self.map(|a| a.clamp(lo, hi)))
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &ParamVector) -> Result<()> {
        check_len(self.len(), other.len())?;
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        check_len(self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm_l2(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Euclidean distance `‖self − other‖₂`.
    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        check_len(self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|a| a.is_finite())
    }

    pub(crate) fn ensure_finite(&self, context: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context))
        }
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}
