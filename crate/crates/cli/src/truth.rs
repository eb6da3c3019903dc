//! Reference posterior moments: exact quadrature on enumerable lattices,
//! a long exchange run otherwise.

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use msmc_core::ising::{brute_force_posterior, midpoint_grid, IsingModel, MAX_ENUM_NODES};
use msmc_core::mcmc::{exchange_mcmc, McmcConfig};
use msmc_core::model::Model;
use msmc_core::{Prior, SuffStats};

use crate::config::{TruthMethod, TruthSection};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    pub method: String,
    pub mean: Vec<f64>,
    /// Row-major d×d posterior covariance.
    pub cov: Vec<f64>,
    /// Only available from quadrature.
    pub log_evidence: Option<f64>,
}

/// Grid box for quadrature: the prior support, or ±6 sd around a normal
/// prior's mean.
fn quadrature_box(prior: &Prior) -> anyhow::Result<(Vec<f64>, Vec<f64>)> {
    match prior {
        Prior::Uniform { lo, hi } => Ok((lo.clone(), hi.clone())),
        Prior::Normal { mean, sd } => Ok((
            mean.iter().zip(sd).map(|(m, s)| m - 6.0 * s).collect(),
            mean.iter().zip(sd).map(|(m, s)| m + 6.0 * s).collect(),
        )),
        Prior::Point { .. } => bail!("quadrature over a point prior is degenerate"),
    }
}

pub fn ground_truth(
    model: &IsingModel,
    prior: &Prior,
    y_stats: &SuffStats,
    cfg: &TruthSection,
) -> anyhow::Result<GroundTruth> {
    let enumerable = model.spec().nodes() <= MAX_ENUM_NODES;
    let use_quadrature = match cfg.method {
        TruthMethod::Quadrature => {
            if !enumerable {
                bail!(
                    "quadrature needs <= {MAX_ENUM_NODES} nodes, lattice has {}",
                    model.spec().nodes()
                );
            }
            true
        }
        TruthMethod::Exchange => false,
        TruthMethod::Auto => enumerable,
    };

    if use_quadrature {
        let (lo, hi) = quadrature_box(prior)?;
        let (grid, vol) = midpoint_grid(&lo, &hi, cfg.grid_per_dim);
        let table = brute_force_posterior(model, prior, y_stats, &grid, vol)
            .context("quadrature ground truth")?;
        Ok(GroundTruth {
            method: "quadrature".into(),
            mean: table.mean.0,
            cov: table.cov,
            log_evidence: Some(table.log_evidence),
        })
    } else {
        let run = exchange_mcmc(
            model,
            y_stats,
            prior,
            &McmcConfig {
                iterations: cfg.exchange_iterations,
                burn_in: cfg.exchange_burn_in,
                proposal_sd: cfg.exchange_proposal_sd,
                sweeps: 100,
            },
            cfg.seed,
        )
        .context("exchange ground truth")?;
        let mean = run.posterior_mean().0;
        let d = model.dim();
        let mut cov = vec![0.0; d * d];
        for t in &run.trace {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (t.0[i] - mean[i]) * (t.0[j] - mean[j]);
                }
            }
        }
        for c in cov.iter_mut() {
            *c /= run.trace.len() as f64;
        }
        Ok(GroundTruth { method: "exchange".into(), mean, cov, log_evidence: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_data;
    use msmc_core::ising::{IsingSpec, NeighbourOrder};
    use msmc_core::Theta;

    fn model44() -> IsingModel {
        IsingModel::new(IsingSpec::new(4, 4, NeighbourOrder::First).unwrap())
    }

    fn uniform01() -> Prior {
        Prior::Uniform { lo: vec![0.0], hi: vec![1.0] }
    }

    #[test]
    fn quadrature_and_exchange_truths_agree() {
        let m = model44();
        let (_, y) = generate_data(&m, &Theta(vec![0.3]), 10_000, 3).unwrap();
        let quad = ground_truth(&m, &uniform01(), &y, &TruthSection::default()).unwrap();
        assert_eq!(quad.method, "quadrature");

        let exch_cfg = TruthSection {
            method: TruthMethod::Exchange,
            exchange_iterations: 60_000,
            exchange_burn_in: 1_000,
            exchange_proposal_sd: 0.25,
            ..Default::default()
        };
        let exch = ground_truth(&m, &uniform01(), &y, &exch_cfg).unwrap();
        assert_eq!(exch.method, "exchange");
        let rel = (quad.mean[0] - exch.mean[0]).abs() / quad.mean[0].abs().max(0.1);
        assert!(rel < 0.01, "quadrature {} exchange {}", quad.mean[0], exch.mean[0]);
    }

    #[test]
    fn symmetric_prior_and_zero_statistics_centre_at_zero() {
        let m = model44();
        let prior = Prior::Uniform { lo: vec![-1.0], hi: vec![1.0] };
        let t = ground_truth(&m, &prior, &SuffStats(vec![0.0]), &TruthSection::default()).unwrap();
        assert!(t.mean[0].abs() < 1e-12);
    }

    #[test]
    fn truth_is_deterministic() {
        let m = model44();
        let (_, y) = generate_data(&m, &Theta(vec![0.3]), 10_000, 3).unwrap();
        let cfg = TruthSection {
            method: TruthMethod::Exchange,
            exchange_iterations: 5_000,
            exchange_burn_in: 500,
            exchange_proposal_sd: 0.25,
            ..Default::default()
        };
        let a = ground_truth(&m, &uniform01(), &y, &cfg).unwrap();
        let b = ground_truth(&m, &uniform01(), &y, &cfg).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.cov, b.cov);
    }
}
