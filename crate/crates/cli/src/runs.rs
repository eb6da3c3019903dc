//! Dispatch one algorithm run under the shared budget convention.

use msmc_core::ising::IsingModel;
use msmc_core::mcmc::{abc_mcmc, exchange_mcmc, sav_mcmc, McmcRun};
use msmc_core::seed::splitmix64;
use msmc_core::smc::{run_path_msmc, run_sav_msmc, theta_hat, SmcRun};
use msmc_core::{Prior, SuffStats};

use crate::config::{AlgoId, ExperimentConfig};

pub enum RunArtifacts {
    Mcmc(McmcRun),
    Smc(SmcRun),
}

impl RunArtifacts {
    /// Posterior-mean estimate: trace average for chains, weighted
    /// particle mean for SMC.
    pub fn estimate(&self) -> Vec<f64> {
        match self {
            RunArtifacts::Mcmc(run) => run.posterior_mean().0,
            RunArtifacts::Smc(run) => theta_hat(&run.particles).0,
        }
    }

    pub fn simulations(&self) -> u64 {
        match self {
            RunArtifacts::Mcmc(run) => run.simulations,
            RunArtifacts::Smc(run) => run.simulations,
        }
    }
}

/// Replicate seeds are shared across algorithms so runs pair up.
pub fn replicate_seed(master: u64, replicate: usize) -> u64 {
    splitmix64(master ^ (0x5eed_0000_0000_0000 | replicate as u64))
}

pub fn run_algorithm(
    model: &IsingModel,
    y_stats: &SuffStats,
    prior: &Prior,
    cfg: &ExperimentConfig,
    algo: AlgoId,
    seed: u64,
) -> anyhow::Result<RunArtifacts> {
    let out = match algo {
        AlgoId::Exchange => {
            RunArtifacts::Mcmc(exchange_mcmc(model, y_stats, prior, &cfg.mcmc_config(), seed)?)
        }
        AlgoId::SavMcmc => RunArtifacts::Mcmc(sav_mcmc(
            model,
            y_stats,
            prior,
            &cfg.mcmc_config(),
            cfg.sav_anchor_policy(),
            seed,
        )?),
        AlgoId::AbcMcmc => {
            RunArtifacts::Mcmc(abc_mcmc(model, y_stats, prior, &cfg.mcmc_config(), seed)?)
        }
        AlgoId::SavMsmc => {
            RunArtifacts::Smc(run_sav_msmc(model, y_stats, prior, &cfg.smc_config()?, seed)?)
        }
        AlgoId::PathMsmc => {
            RunArtifacts::Smc(run_path_msmc(model, y_stats, prior, &cfg.smc_config()?, seed)?)
        }
    };
    Ok(out)
}
