//! Prior distributions over the natural parameter.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::types::{Error, Result, Theta};

const LOG_2PI: f64 = 1.8378770664093453;

/// Priors are independent across components. `Point` is a degenerate prior
/// used for structural tests (all mass on one parameter value).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Prior {
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
    Normal { mean: Vec<f64>, sd: Vec<f64> },
    Point { value: Vec<f64> },
}

impl Prior {
    pub fn dim(&self) -> usize {
        match self {
            Prior::Uniform { lo, .. } => lo.len(),
            Prior::Normal { mean, .. } => mean.len(),
            Prior::Point { value } => value.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Prior::Uniform { lo, hi } => {
                if lo.len() != hi.len() {
                    return Err(Error::DimensionMismatch {
                        expected: lo.len(),
                        got: hi.len(),
                    });
                }
                if lo.is_empty() {
                    return Err(Error::InvalidInput("prior has dimension 0".into()));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
                    return Err(Error::InvalidInput(
                        "uniform prior requires finite lo < hi componentwise".into(),
                    ));
                }
            }
            Prior::Normal { mean, sd } => {
                if mean.len() != sd.len() {
                    return Err(Error::DimensionMismatch {
                        expected: mean.len(),
                        got: sd.len(),
                    });
                }
                if mean.is_empty() {
                    return Err(Error::InvalidInput("prior has dimension 0".into()));
                }
                if sd.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                    return Err(Error::InvalidInput("normal prior requires sd > 0".into()));
                }
            }
            Prior::Point { value } => {
                if value.is_empty() {
                    return Err(Error::InvalidInput("prior has dimension 0".into()));
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Theta {
        match self {
            Prior::Uniform { lo, hi } => Theta(
                lo.iter()
                    .zip(hi)
                    .map(|(a, b)| a + (b - a) * rng.gen::<f64>())
                    .collect(),
            ),
            Prior::Normal { mean, sd } => Theta(
                mean.iter()
                    .zip(sd)
                    .map(|(m, s)| m + s * standard_normal(rng))
                    .collect(),
            ),
            Prior::Point { value } => Theta(value.clone()),
        }
    }

    /// Log density at θ; -inf outside the support. The point-mass prior
    /// reports 0.0 at its atom so that density ratios at the atom cancel.
    pub fn log_density(&self, theta: &Theta) -> f64 {
        match self {
            Prior::Uniform { lo, hi } => {
                let inside = theta
                    .0
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(t, (a, b))| *t >= *a && *t <= *b);
                if inside {
                    -lo.iter()
                        .zip(hi)
                        .map(|(a, b)| (b - a).ln())
                        .sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::Normal { mean, sd } => theta
                .0
                .iter()
                .zip(mean.iter().zip(sd))
                .map(|(t, (m, s))| {
                    let z = (t - m) / s;
                    -0.5 * (LOG_2PI + z * z) - s.ln()
                })
                .sum(),
            Prior::Point { value } => {
                if theta.0 == *value {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            Prior::Uniform { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            Prior::Normal { mean, .. } => mean.clone(),
            Prior::Point { value } => value.clone(),
        }
    }
}

/// Box-Muller draw; two uniforms per normal keeps the stream layout simple.
pub(crate) fn standard_normal(rng: &mut dyn RngCore) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derive_rng;

    #[test]
    fn uniform_density_and_support() {
        let p = Prior::Uniform { lo: vec![0.0], hi: vec![2.0] };
        p.validate().unwrap();
        assert!((p.log_density(&Theta(vec![1.0])) - (-(2f64).ln())).abs() < 1e-12);
        assert_eq!(p.log_density(&Theta(vec![2.5])), f64::NEG_INFINITY);
    }

    #[test]
    fn sample_moments_match_analytic_mean() {
        let p = Prior::Uniform { lo: vec![0.0], hi: vec![1.0] };
        let mut rng = derive_rng(11, &[0]);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| p.sample(&mut rng).0[0]).sum::<f64>() / n as f64;
        // sd of the sample mean is (1 / sqrt(12)) / sqrt(n)
        assert!((mean - 0.5).abs() < 3.0 * (1.0 / 12f64.sqrt()) / (n as f64).sqrt());
    }

    #[test]
    fn normal_log_density_matches_closed_form() {
        let p = Prior::Normal { mean: vec![1.0], sd: vec![2.0] };
        let lp = p.log_density(&Theta(vec![0.0]));
        let expect = -0.5 * (LOG_2PI + 0.25) - 2f64.ln();
        assert!((lp - expect).abs() < 1e-12);
    }

    #[test]
    fn point_prior_is_degenerate() {
        let p = Prior::Point { value: vec![0.3, 0.1] };
        let mut rng = derive_rng(1, &[]);
        assert_eq!(p.sample(&mut rng).0, vec![0.3, 0.1]);
        assert_eq!(p.log_density(&Theta(vec![0.3, 0.1])), 0.0);
        assert_eq!(p.log_density(&Theta(vec![0.0, 0.1])), f64::NEG_INFINITY);
    }
}
