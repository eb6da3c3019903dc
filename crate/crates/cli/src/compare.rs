//! Replicated algorithm comparison at a fixed simulation budget.
//!
//! Every algorithm in the configuration runs `replicates` times; replicate
//! k of every algorithm shares one derived seed, so pairs of algorithms
//! can be compared run-for-run. Bias, standard deviation and RMSE of the
//! posterior-mean estimates are reported against the ground truth, and
//! the instrumented simulation counters are asserted equal to the budget
//! after every run.

use anyhow::{bail, ensure, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use msmc_core::ising::IsingModel;
use msmc_core::{SuffStats, Theta};

use crate::config::{AlgoId, ExperimentConfig};
use crate::data::{generate_data, load_observation};
use crate::runs::{replicate_seed, run_algorithm, RunArtifacts};
use crate::truth::{ground_truth, GroundTruth};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub algorithm: AlgoId,
    pub component: usize,
    /// mean(estimates) − truth.
    pub bias: f64,
    /// Population standard deviation of the estimates.
    pub sd: f64,
    /// √(mean((estimate − truth)²)); equals √(bias² + sd²).
    pub rmse: f64,
    pub replicates_ok: usize,
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub algorithm: AlgoId,
    pub replicate: usize,
    pub seed: u64,
    pub estimate: Option<Vec<f64>>,
    pub simulations: u64,
    pub error: Option<String>,
    /// (target, nu, ess) rows; empty for the chain samplers.
    pub ess_trace: Vec<(usize, f64, f64)>,
    /// (target, hops, particle count); empty for the chain samplers.
    pub path_hops: Vec<(usize, usize, usize)>,
}

#[derive(Debug, Serialize)]
pub struct ComparisonOutput {
    pub schema_version: u32,
    pub truth: GroundTruth,
    pub y_stats: Vec<f64>,
    pub rows: Vec<MetricsRow>,
    pub outcomes: Vec<ReplicateOutcome>,
    pub flagged: bool,
}

impl ComparisonOutput {
    pub fn row(&self, algorithm: AlgoId, component: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.algorithm == algorithm && r.component == component)
    }

    /// Final-target ESS per replicate, paired by replicate index.
    pub fn final_ess(&self, algorithm: AlgoId) -> Vec<Option<f64>> {
        let mut out: Vec<(usize, Option<f64>)> = self
            .outcomes
            .iter()
            .filter(|o| o.algorithm == algorithm)
            .map(|o| (o.replicate, o.ess_trace.last().map(|(_, _, e)| *e)))
            .collect();
        out.sort_by_key(|(r, _)| *r);
        out.into_iter().map(|(_, e)| e).collect()
    }
}

pub fn observation(cfg: &ExperimentConfig, model: &IsingModel) -> anyhow::Result<SuffStats> {
    match (&cfg.data.path, &cfg.data.theta_true) {
        (Some(path), None) => {
            let lattice = load_observation(path)?;
            Ok(model.suff_stats_checked(&lattice)?)
        }
        (None, Some(theta)) => {
            let (_, stats) =
                generate_data(model, &Theta(theta.clone()), cfg.data.sweeps, cfg.data.seed)?;
            Ok(stats)
        }
        _ => bail!("invalid data section"),
    }
}

fn run_one(
    model: &IsingModel,
    y_stats: &SuffStats,
    cfg: &ExperimentConfig,
    algo: AlgoId,
    replicate: usize,
) -> ReplicateOutcome {
    let seed = replicate_seed(cfg.budget.master_seed, replicate);
    match run_algorithm(model, y_stats, &cfg.prior, cfg, algo, seed) {
        Ok(artifacts) => {
            let (ess_trace, path_hops) = match &artifacts {
                RunArtifacts::Smc(run) => (
                    run.diags.iter().map(|d| (d.target, d.nu, d.ess)).collect(),
                    run.diags
                        .iter()
                        .flat_map(|d| {
                            d.path_hops.iter().map(|(h, c)| (d.target, *h, *c)).collect::<Vec<_>>()
                        })
                        .collect(),
                ),
                RunArtifacts::Mcmc(_) => (Vec::new(), Vec::new()),
            };
            ReplicateOutcome {
                algorithm: algo,
                replicate,
                seed,
                estimate: Some(artifacts.estimate()),
                simulations: artifacts.simulations(),
                error: None,
                ess_trace,
                path_hops,
            }
        }
        Err(err) => ReplicateOutcome {
            algorithm: algo,
            replicate,
            seed,
            estimate: None,
            simulations: 0,
            error: Some(err.to_string()),
            ess_trace: Vec::new(),
            path_hops: Vec::new(),
        },
    }
}

fn metrics(
    algo: AlgoId,
    outcomes: &[ReplicateOutcome],
    truth: &[f64],
    flagged: bool,
) -> Vec<MetricsRow> {
    let estimates: Vec<&Vec<f64>> =
        outcomes.iter().filter_map(|o| o.estimate.as_ref()).collect();
    let n = estimates.len();
    let d = truth.len();
    (0..d)
        .map(|component| {
            let vals: Vec<f64> = estimates.iter().map(|e| e[component]).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let bias = mean - truth[component];
            let sd =
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            let rmse = (vals.iter().map(|v| (v - truth[component]).powi(2)).sum::<f64>()
                / n as f64)
                .sqrt();
            MetricsRow { algorithm: algo, component, bias, sd, rmse, replicates_ok: n, flagged }
        })
        .collect()
}

pub fn run_comparison(cfg: &ExperimentConfig) -> anyhow::Result<ComparisonOutput> {
    cfg.validate()?;
    let model = IsingModel::new(cfg.model.spec()?);
    let y_stats = observation(cfg, &model)?;
    let truth = ground_truth(&model, &cfg.prior, &y_stats, &cfg.truth)
        .context("computing ground truth")?;

    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    let mut any_flagged = false;
    for &algo in &cfg.algorithms.run {
        let algo_outcomes: Vec<ReplicateOutcome> = (0..cfg.budget.replicates)
            .into_par_iter()
            .map(|r| run_one(&model, &y_stats, cfg, algo, r))
            .collect();
        let flagged = algo_outcomes.iter().any(|o| o.error.is_some());
        any_flagged |= flagged;
        // budget parity: every completed run must have spent exactly the
        // configured number of likelihood simulations
        for o in &algo_outcomes {
            if o.error.is_none() {
                ensure!(
                    o.simulations == cfg.budget.simulations as u64,
                    "{algo} replicate {} consumed {} simulations, budget is {}",
                    o.replicate,
                    o.simulations,
                    cfg.budget.simulations
                );
            }
        }
        if algo_outcomes.iter().all(|o| o.error.is_some()) {
            bail!("{algo}: every replicate aborted: {}", algo_outcomes[0].error.clone().unwrap());
        }
        rows.extend(metrics(algo, &algo_outcomes, &truth.mean, flagged));
        outcomes.extend(algo_outcomes);
    }
    Ok(ComparisonOutput {
        schema_version: crate::config::SCHEMA_VERSION,
        truth,
        y_stats: y_stats.0,
        rows,
        outcomes,
        flagged: any_flagged,
    })
}
