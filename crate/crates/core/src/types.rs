//! Shared domain types and the crate error type.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("lattice has {nodes} nodes; exhaustive enumeration is capped at {max}")]
    TooLargeForEnumeration { nodes: usize, max: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("all particle weights are -inf at target {target}")]
    DegenerateWeights { target: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed lattice data: {0}")]
    MalformedData(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Natural parameter vector of an exponential-family model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta(pub Vec<f64>);

impl Theta {
    pub fn zeros(dim: usize) -> Self {
        Theta(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Inner product θᵀ S(x). Dimensions must agree.
    pub fn dot(&self, stats: &SuffStats) -> Result<f64> {
        if self.dim() != stats.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: stats.dim(),
            });
        }
        Ok(dot_unchecked(&self.0, &stats.0))
    }

    /// Componentwise difference self − other.
    pub fn sub(&self, other: &Theta) -> Result<Theta> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(Theta(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }
}

impl From<Vec<f64>> for Theta {
    fn from(v: Vec<f64>) -> Self {
        Theta(v)
    }
}

/// Sufficient statistic vector S(x).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuffStats(pub Vec<f64>);

impl SuffStats {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for SuffStats {
    fn from(v: Vec<f64>) -> Self {
        SuffStats(v)
    }
}

pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_checks_dimensions() {
        let t = Theta(vec![0.5, 1.0]);
        assert!(t.dot(&SuffStats(vec![1.0])).is_err());
        assert_eq!(t.dot(&SuffStats(vec![2.0, 3.0])).unwrap(), 4.0);
    }

    #[test]
    fn sub_is_componentwise() {
        let a = Theta(vec![1.0, 2.0]);
        let b = Theta(vec![0.5, -1.0]);
        assert_eq!(a.sub(&b).unwrap().0, vec![0.5, 3.0]);
    }
}
