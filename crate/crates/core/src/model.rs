//! Model abstraction consumed by the estimators and samplers.
//!
//! Everything downstream of the model needs only the exponential-family
//! structure: the unnormalised log density θᵀS(x), a way to simulate
//! (approximately) from f(·|θ), and the statistic S(x) of a simulated
//! state. A new model plugs in by implementing [`Model`]; samplers and
//! estimators do not change.

use rand::RngCore;

use crate::types::{Result, SuffStats, Theta};

pub trait Model: Sync {
    type State: Clone + Send + Sync;

    /// Dimension d of θ and S(x).
    fn dim(&self) -> usize;

    /// S(x) for a concrete state.
    fn suff_stats(&self, state: &Self::State) -> SuffStats;

    /// A state drawn uniformly over the sample space, used to start
    /// Gibbs runs.
    fn random_state(&self, rng: &mut dyn RngCore) -> Self::State;

    /// One systematic-scan update pass targeting f(·|θ), visiting every
    /// site once in fixed order.
    fn gibbs_sweep(&self, theta: &Theta, state: &mut Self::State, rng: &mut dyn RngCore)
        -> Result<()>;

    /// Unnormalised log density log γ(x|θ) = θᵀS(x), evaluated from the
    /// statistic alone.
    fn log_gamma(&self, theta: &Theta, stats: &SuffStats) -> Result<f64> {
        theta.dot(stats)
    }

    /// Approximate draw from f(·|θ): a fresh uniform state followed by
    /// `sweeps` Gibbs sweeps.
    fn simulate(
        &self,
        theta: &Theta,
        sweeps: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(Self::State, SuffStats)> {
        let mut state = self.random_state(rng);
        for _ in 0..sweeps {
            self.gibbs_sweep(theta, &mut state, rng)?;
        }
        let stats = self.suff_stats(&state);
        Ok((state, stats))
    }
}

/// Transition log probabilities of one sweep, recorded while it runs.
///
/// `log_forward` is the probability of the move that was made, site by
/// site in scan order. `log_reverse` is the probability that the sweep run
/// in reversed site order from the new state recovers the old one; this is
/// the time reversal of the scan, and each site factor shares the
/// conditioning configuration with its forward counterpart.
#[derive(Clone, Copy, Debug)]
pub struct SweepTransition {
    pub log_forward: f64,
    pub log_reverse: f64,
}

/// Models whose sweep transition density is pointwise computable.
pub trait GibbsTransition: Model {
    fn gibbs_sweep_logged(
        &self,
        theta: &Theta,
        state: &mut Self::State,
        rng: &mut dyn RngCore,
    ) -> Result<SweepTransition>;
}
