//! Flat parameter vectors and the deterministic averaging primitives.
//!
//! All reductions over clients iterate in ascending client-id order and all
//! reductions over examples iterate in dataset order, so runs are
//! bit-reproducible regardless of internal parallelism.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ClientId;

/// A dense vector of 64-bit model parameters.
///
/// Every constructor rejects NaN/Inf entries; a non-finite value anywhere in
/// the pipeline is a hard error, not a silent poison.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "parameter vector",
            });
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_dim(other.dim())?;
        Ok(self
            .0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    /// Squared Euclidean distance to `other`.
    pub fn distance_sq(&self, other: &ParamVector) -> Result<f64> {
        self.check_dim(other.dim())?;
        Ok(self
            .0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Convex combination of client parameter vectors.
///
/// Coefficients must be non-negative and sum to 1 within 1e-12; the sum runs
/// in ascending client-id order.
pub fn weighted_average(
    weights: &BTreeMap<ClientId, ParamVector>,
    coefficients: &BTreeMap<ClientId, f64>,
) -> Result<ParamVector> {
    if weights.is_empty() {
        return Err(Error::EmptySet);
    }
    if weights.len() != coefficients.len() || !weights.keys().eq(coefficients.keys()) {
        return Err(Error::KeyMismatch);
    }
    for (&client, &c) in coefficients {
        if c < 0.0 || !c.is_finite() {
            return Err(Error::NegativeCoefficient { client, value: c });
        }
    }
    let total: f64 = coefficients.values().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::CoefficientSum { sum: total });
    }
    let dim = weights.values().next().expect("non-empty").dim();
    let mut acc = vec![0.0; dim];
    for (client, vector) in weights {
        vector.check_dim(dim)?;
        let c = coefficients[client];
        for (a, v) in acc.iter_mut().zip(vector.as_slice()) {
            *a += c * v;
        }
    }
    ParamVector::new(acc)
}

/// Uniform mean of parameter vectors, summed in the order given.
///
/// Callers that average over clients pass vectors in ascending client-id
/// order; repeated entries are allowed (sampling with replacement).
pub fn simple_average<'a, I>(vectors: I) -> Result<ParamVector>
where
    I: IntoIterator<Item = &'a ParamVector>,
{
    let mut iter = vectors.into_iter();
    let first = iter.next().ok_or(Error::EmptySet)?;
    let dim = first.dim();
    let mut acc: Vec<f64> = first.as_slice().to_vec();
    let mut count = 1usize;
    for vector in iter {
        vector.check_dim(dim)?;
        for (a, v) in acc.iter_mut().zip(vector.as_slice()) {
            *a += v;
        }
        count += 1;
    }
    let inv = 1.0 / count as f64;
    for a in acc.iter_mut() {
        *a *= inv;
    }
    ParamVector::new(acc)
}
