//! Streaming per-channel mean and variance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const VAR_FLOOR: f64 = 1e-8;

/// Welford accumulator over observation vectors.
///
/// `apply` maps `x` to `(x - mean) / sqrt(var + 1e-8)` and is the identity
/// before any sample has been seen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    count: u64,
    mean: Vec<f64>,
    /// Sum of squared deviations from the mean.
    m2: Vec<f64>,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    /// Rebuild from stored statistics, e.g. a checkpoint. `m2` is the
    /// per-channel sum of squared deviations, see [`Self::m2`].
    pub fn from_parts(count: u64, mean: Vec<f64>, m2: Vec<f64>) -> Result<Self> {
        if mean.len() != m2.len() {
            return Err(Error::Shape(format!(
                "normalizer mean has {} channels but m2 has {}",
                mean.len(),
                m2.len()
            )));
        }
        if m2.iter().chain(&mean).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("normalizer statistics"));
        }
        if m2.iter().any(|v| *v < 0.0) {
            return Err(Error::Config("normalizer m2 must be non-negative".into()));
        }
        Ok(Self { count, mean, m2 })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn m2(&self) -> &[f64] {
        &self.m2
    }

    /// Population variance per channel.
    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim()];
        }
        self.m2.iter().map(|m| (m / self.count as f64).max(0.0)).collect()
    }

    pub fn update(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim());
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &xi) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = xi - *mean;
            *mean += delta / n;
            *m2 += delta * (xi - *mean);
        }
    }

    /// Fold another accumulator in (parallel-variance combination).
    pub fn merge(&mut self, other: &RunningNormalizer) {
        debug_assert_eq!(other.dim(), self.dim());
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.dim() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if self.count == 0 {
            return x.to_vec();
        }
        let var = self.variance();
        x.iter()
            .zip(&self.mean)
            .zip(&var)
            .map(|((xi, m), v)| (xi - m) / (v + VAR_FLOOR).sqrt())
            .collect()
    }
}
