//! MCMC baselines for the same intractable-normaliser posteriors.
//!
//! Three random-walk samplers sharing one budget convention — every
//! iteration costs exactly one likelihood simulation:
//!
//! - [`exchange_mcmc`]: substitutes γ(x|θ)/γ(x|θ*) with x ~ f(·|θ*) for
//!   the intractable Z(θ)/Z(θ*) in the acceptance ratio; still targets
//!   the exact posterior.
//! - [`sav_mcmc`]: pseudo-marginal chain whose acceptance compares a
//!   fresh ratio estimate at the proposal against the estimate cached for
//!   the current state. The cache changes only on acceptance — that
//!   retention is what keeps the extended-space target exact. Cached
//!   statistics are re-anchored on the fly when the anchor θ̂ moves, so
//!   both sides of every comparison share one anchor and the Z(θ̂)
//!   factor cancels.
//! - [`abc_mcmc`]: accepts with the prior-ratio probability only when the
//!   simulated statistics match the observed ones exactly (zero
//!   tolerance, discrete statistics). With sufficient statistics this is
//!   exact for the likelihood restricted to achievable statistics, at the
//!   price of rejecting every non-matching simulation.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::model::Model;
use crate::prior::{standard_normal, Prior};
use crate::seed::derive_rng;
use crate::types::{Error, Result, SuffStats, Theta};

const TAG_EXCHANGE: u64 = 0x11;
const TAG_SAV: u64 = 0x12;
const TAG_ABC: u64 = 0x13;

#[derive(Clone, Debug)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// Isotropic Gaussian random-walk standard deviation.
    pub proposal_sd: f64,
    /// Gibbs sweeps per likelihood simulation.
    pub sweeps: usize,
}

impl McmcConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::InvalidInput("iterations must exceed burn-in".into()));
        }
        if !(self.proposal_sd >= 0.0) || !self.proposal_sd.is_finite() {
            return Err(Error::InvalidInput("proposal sd must be finite and >= 0".into()));
        }
        if self.sweeps == 0 {
            return Err(Error::InvalidInput("sweeps must be >= 1".into()));
        }
        Ok(())
    }
}

/// How the SAV anchor θ̂ evolves along the chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorPolicy {
    /// θ̂ = 0 for the first `warmup` iterations, afterwards refreshed
    /// every iteration to the average of the previous `window` states.
    Trailing { warmup: usize, window: usize },
    /// θ̂ = 0 for the first `warmup` iterations, then frozen at the
    /// average of the `window` states preceding the warmup boundary.
    FixedAfterWarmup { warmup: usize, window: usize },
}

impl Default for AnchorPolicy {
    fn default() -> Self {
        AnchorPolicy::Trailing { warmup: 500, window: 250 }
    }
}

/// One chain's output. `trace` holds the post-burn-in states only;
/// `accepted` and `log_alpha` cover every iteration for diagnostics.
#[derive(Clone, Debug)]
pub struct McmcRun {
    pub trace: Vec<Theta>,
    pub accepted: Vec<bool>,
    pub log_alpha: Vec<f64>,
    /// Acceptance fraction over iterations that proposed a move.
    pub acceptance_rate: f64,
    /// Longest consecutive-rejection run after burn-in; long runs are the
    /// signature of an overestimated cached ratio pinning the chain.
    pub max_rejection_run: usize,
    pub simulations: u64,
    /// Per-iteration flag: did the cached auxiliary statistics change?
    /// Only populated by [`sav_mcmc`].
    pub cache_changed: Option<Vec<bool>>,
}

impl McmcRun {
    pub fn posterior_mean(&self) -> Theta {
        let d = self.trace[0].dim();
        let mut mean = vec![0.0; d];
        for t in &self.trace {
            for (m, v) in mean.iter_mut().zip(&t.0) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= self.trace.len() as f64;
        }
        Theta(mean)
    }
}

fn propose(theta: &Theta, sd: f64, rng: &mut ChaCha12Rng) -> Theta {
    Theta(theta.0.iter().map(|t| t + sd * standard_normal(rng)).collect())
}

fn max_rejection_run(accepted: &[bool], burn_in: usize) -> usize {
    let mut longest = 0;
    let mut current = 0;
    for &a in &accepted[burn_in..] {
        if a {
            current = 0;
        } else {
            current += 1;
            longest = longest.max(current);
        }
    }
    longest
}

fn finish(
    full_trace: Vec<Theta>,
    accepted: Vec<bool>,
    log_alpha: Vec<f64>,
    proposals: usize,
    burn_in: usize,
    simulations: u64,
    cache_changed: Option<Vec<bool>>,
) -> McmcRun {
    let n_acc = accepted.iter().filter(|a| **a).count();
    McmcRun {
        trace: full_trace[burn_in..].to_vec(),
        max_rejection_run: max_rejection_run(&accepted, burn_in),
        acceptance_rate: n_acc as f64 / proposals as f64,
        accepted,
        log_alpha,
        simulations,
        cache_changed,
    }
}

fn check_inputs<M: Model>(model: &M, y_stats: &SuffStats, prior: &Prior) -> Result<()> {
    prior.validate()?;
    if prior.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: prior.dim() });
    }
    if y_stats.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: y_stats.dim() });
    }
    Ok(())
}

/// Approximate exchange sampler: one auxiliary simulation at the proposed
/// θ* per iteration.
pub fn exchange_mcmc<M: Model>(
    model: &M,
    y_stats: &SuffStats,
    prior: &Prior,
    cfg: &McmcConfig,
    seed: u64,
) -> Result<McmcRun> {
    cfg.validate()?;
    check_inputs(model, y_stats, prior)?;
    let mut rng = derive_rng(seed, &[TAG_EXCHANGE]);
    let mut theta = Theta(prior.mean());
    let mut sims = 0u64;
    let mut full_trace = Vec::with_capacity(cfg.iterations);
    let mut accepted = Vec::with_capacity(cfg.iterations);
    let mut log_alpha = Vec::with_capacity(cfg.iterations);

    for _ in 0..cfg.iterations {
        let proposal = propose(&theta, cfg.proposal_sd, &mut rng);
        let (_, aux_stats) = model.simulate(&proposal, cfg.sweeps, &mut rng)?;
        sims += 1;
        // p(θ*)γ(y|θ*)γ(x|θ) / p(θ)γ(y|θ)γ(x|θ*), x ~ f(·|θ*)
        let la = prior.log_density(&proposal) - prior.log_density(&theta)
            + proposal.sub(&theta)?.dot(y_stats)?
            + theta.sub(&proposal)?.dot(&aux_stats)?;
        let accept = (rng.gen::<f64>()).ln() < la;
        if accept {
            theta = proposal;
        }
        accepted.push(accept);
        log_alpha.push(la);
        full_trace.push(theta.clone());
    }
    Ok(finish(full_trace, accepted, log_alpha, cfg.iterations, cfg.burn_in, sims, None))
}

/// Pseudo-marginal single-auxiliary-variable sampler.
///
/// Iteration 0 spends its simulation on seeding the cache at the starting
/// point instead of proposing, so the chain consumes exactly one
/// simulation per iteration like the other samplers.
pub fn sav_mcmc<M: Model>(
    model: &M,
    y_stats: &SuffStats,
    prior: &Prior,
    cfg: &McmcConfig,
    anchor_policy: AnchorPolicy,
    seed: u64,
) -> Result<McmcRun> {
    cfg.validate()?;
    check_inputs(model, y_stats, prior)?;
    let dim = model.dim();
    let mut rng = derive_rng(seed, &[TAG_SAV]);
    let mut theta = Theta(prior.mean());
    let (_, mut cached_stats) = model.simulate(&theta, cfg.sweeps, &mut rng)?;
    let mut sims = 1u64;

    let mut full_trace = vec![theta.clone()];
    let mut accepted = vec![false];
    let mut log_alpha = vec![0.0];
    let mut cache_changed = vec![false];
    let mut frozen_anchor: Option<Theta> = None;

    let trailing_mean = |trace: &[Theta], window: usize| -> Theta {
        let take = window.min(trace.len());
        let slice = &trace[trace.len() - take..];
        let mut mean = vec![0.0; dim];
        for t in slice {
            for (m, v) in mean.iter_mut().zip(&t.0) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= take as f64;
        }
        Theta(mean)
    };

    for i in 1..cfg.iterations {
        let anchor = match anchor_policy {
            AnchorPolicy::Trailing { warmup, window } => {
                if i < warmup {
                    Theta::zeros(dim)
                } else {
                    trailing_mean(&full_trace, window)
                }
            }
            AnchorPolicy::FixedAfterWarmup { warmup, window } => {
                if i < warmup {
                    Theta::zeros(dim)
                } else {
                    frozen_anchor
                        .get_or_insert_with(|| trailing_mean(&full_trace, window))
                        .clone()
                }
            }
        };

        let proposal = propose(&theta, cfg.proposal_sd, &mut rng);
        let (_, aux_stats) = model.simulate(&proposal, cfg.sweeps, &mut rng)?;
        sims += 1;
        // fresh estimate at θ* against the cached estimate at θ, both
        // expressed against the current anchor
        let la = prior.log_density(&proposal) - prior.log_density(&theta)
            + proposal.sub(&theta)?.dot(y_stats)?
            + anchor.sub(&proposal)?.dot(&aux_stats)?
            - anchor.sub(&theta)?.dot(&cached_stats)?;
        let accept = (rng.gen::<f64>()).ln() < la;
        if accept {
            theta = proposal;
            cached_stats = aux_stats;
        }
        accepted.push(accept);
        log_alpha.push(la);
        cache_changed.push(accept);
        full_trace.push(theta.clone());
    }
    Ok(finish(
        full_trace,
        accepted,
        log_alpha,
        cfg.iterations - 1,
        cfg.burn_in,
        sims,
        Some(cache_changed),
    ))
}

/// ABC sampler with zero tolerance on the (integer-valued) summary
/// statistics: a proposal survives only when its simulation reproduces
/// the observed statistics exactly, and is then accepted with the
/// prior-ratio probability.
pub fn abc_mcmc<M: Model>(
    model: &M,
    y_stats: &SuffStats,
    prior: &Prior,
    cfg: &McmcConfig,
    seed: u64,
) -> Result<McmcRun> {
    cfg.validate()?;
    check_inputs(model, y_stats, prior)?;
    let mut rng = derive_rng(seed, &[TAG_ABC]);
    let mut theta = Theta(prior.mean());
    let mut sims = 0u64;
    let mut full_trace = Vec::with_capacity(cfg.iterations);
    let mut accepted = Vec::with_capacity(cfg.iterations);
    let mut log_alpha = Vec::with_capacity(cfg.iterations);

    for _ in 0..cfg.iterations {
        let proposal = propose(&theta, cfg.proposal_sd, &mut rng);
        let (_, aux_stats) = model.simulate(&proposal, cfg.sweeps, &mut rng)?;
        sims += 1;
        // exact equality; the statistics are integer-valued
        let matched = aux_stats.0 == y_stats.0;
        let la = if matched {
            prior.log_density(&proposal) - prior.log_density(&theta)
        } else {
            f64::NEG_INFINITY
        };
        let accept = (rng.gen::<f64>()).ln() < la;
        if accept {
            theta = proposal;
        }
        accepted.push(accept);
        log_alpha.push(la);
        full_trace.push(theta.clone());
    }
    Ok(finish(full_trace, accepted, log_alpha, cfg.iterations, cfg.burn_in, sims, None))
}
