//! Experiment configuration: one TOML file describes the model, data,
//! prior, ground-truth method, simulation budget, and per-algorithm
//! parameters. The full schema is documented in the repository README.

use std::fmt;
use std::path::PathBuf;

use anyhow::{bail, ensure, Context};
use serde::{Deserialize, Serialize};

use msmc_core::ising::{IsingSpec, NeighbourOrder};
use msmc_core::Prior;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgoId {
    Exchange,
    SavMcmc,
    AbcMcmc,
    SavMsmc,
    PathMsmc,
}

impl AlgoId {
    pub fn is_smc(self) -> bool {
        matches!(self, AlgoId::SavMsmc | AlgoId::PathMsmc)
    }

    pub const ALL: [AlgoId; 5] = [
        AlgoId::Exchange,
        AlgoId::SavMcmc,
        AlgoId::AbcMcmc,
        AlgoId::SavMsmc,
        AlgoId::PathMsmc,
    ];
}

impl fmt::Display for AlgoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            AlgoId::Exchange => "exchange",
            AlgoId::SavMcmc => "sav-mcmc",
            AlgoId::AbcMcmc => "abc-mcmc",
            AlgoId::SavMsmc => "sav-msmc",
            AlgoId::PathMsmc => "path-msmc",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub width: usize,
    pub height: usize,
    pub order: NeighbourOrder,
}

impl ModelSection {
    pub fn spec(&self) -> anyhow::Result<IsingSpec> {
        Ok(IsingSpec::new(self.width, self.height, self.order)?)
    }
}

/// Observations either come from a file or are regenerated by a long,
/// seeded Gibbs run at `theta_true`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub theta_true: Option<Vec<f64>>,
    #[serde(default = "default_data_seed")]
    pub seed: u64,
    #[serde(default = "default_data_sweeps")]
    pub sweeps: usize,
}

fn default_data_seed() -> u64 {
    7
}

fn default_data_sweeps() -> usize {
    10_000
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthMethod {
    /// Quadrature with exact partition functions when the lattice is
    /// enumerable, otherwise a long exchange run.
    Auto,
    Quadrature,
    Exchange,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    #[serde(default = "default_truth_method")]
    pub method: TruthMethod,
    #[serde(default = "default_grid_per_dim")]
    pub grid_per_dim: usize,
    #[serde(default = "default_truth_iterations")]
    pub exchange_iterations: usize,
    #[serde(default = "default_truth_burn_in")]
    pub exchange_burn_in: usize,
    #[serde(default = "default_truth_sd")]
    pub exchange_proposal_sd: f64,
    #[serde(default = "default_truth_seed")]
    pub seed: u64,
}

fn default_truth_method() -> TruthMethod {
    TruthMethod::Auto
}

fn default_grid_per_dim() -> usize {
    200
}

fn default_truth_iterations() -> usize {
    100_000
}

fn default_truth_burn_in() -> usize {
    1_000
}

fn default_truth_sd() -> f64 {
    0.08
}

fn default_truth_seed() -> u64 {
    10_007
}

impl Default for TruthSection {
    fn default() -> Self {
        TruthSection {
            method: default_truth_method(),
            grid_per_dim: default_grid_per_dim(),
            exchange_iterations: default_truth_iterations(),
            exchange_burn_in: default_truth_burn_in(),
            exchange_proposal_sd: default_truth_sd(),
            seed: default_truth_seed(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    /// Likelihood simulations per replicate; every algorithm consumes
    /// exactly this many.
    pub simulations: usize,
    pub replicates: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmsSection {
    pub run: Vec<AlgoId>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSection {
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub proposal_sd: f64,
    #[serde(default = "default_sim_sweeps")]
    pub sweeps: usize,
    #[serde(default = "default_sav_anchor")]
    pub sav_anchor: SavAnchorKind,
    #[serde(default = "default_sav_warmup")]
    pub sav_warmup: usize,
    #[serde(default = "default_sav_window")]
    pub sav_window: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SavAnchorKind {
    Trailing,
    FixedAfterWarmup,
}

fn default_burn_in() -> usize {
    500
}

fn default_sim_sweeps() -> usize {
    100
}

fn default_sav_anchor() -> SavAnchorKind {
    SavAnchorKind::Trailing
}

fn default_sav_warmup() -> usize {
    500
}

fn default_sav_window() -> usize {
    250
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmcSection {
    pub particles: usize,
    pub targets: usize,
    #[serde(default = "default_schedule_power")]
    pub schedule_power: f64,
    #[serde(default = "default_sim_sweeps")]
    pub sweeps: usize,
    #[serde(default)]
    pub ess_resample_threshold: Option<f64>,
    #[serde(default)]
    pub history_window: Option<usize>,
    #[serde(default)]
    pub extra_early_targets: usize,
}

fn default_schedule_power() -> f64 {
    2.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version_default")]
    pub schema_version: u32,
    pub model: ModelSection,
    pub data: DataSection,
    pub prior: Prior,
    #[serde(default)]
    pub truth: TruthSection,
    pub budget: BudgetSection,
    pub algorithms: AlgorithmsSection,
    pub mcmc: McmcSection,
    pub smc: SmcSection,
}

fn schema_version_default() -> u32 {
    SCHEMA_VERSION
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(
            self.schema_version == SCHEMA_VERSION,
            "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
            self.schema_version
        );
        let spec = self.model.spec()?;
        self.prior.validate()?;
        ensure!(
            self.prior.dim() == spec.dim(),
            "prior dimension {} does not match the model dimension {}",
            self.prior.dim(),
            spec.dim()
        );
        match (&self.data.path, &self.data.theta_true) {
            (Some(_), Some(_)) => bail!("data: give either `path` or `theta_true`, not both"),
            (None, None) => bail!("data: give `path` or `theta_true`"),
            (None, Some(t)) => {
                ensure!(
                    t.len() == spec.dim(),
                    "data.theta_true has dimension {}, model needs {}",
                    t.len(),
                    spec.dim()
                );
                ensure!(
                    self.data.sweeps >= 10_000,
                    "data.sweeps must be >= 10000 for a near-equilibrium draw"
                );
            }
            (Some(_), None) => {}
        }
        ensure!(self.budget.replicates >= 1, "budget.replicates must be >= 1");
        ensure!(!self.algorithms.run.is_empty(), "algorithms.run must not be empty");

        let uses_mcmc = self.algorithms.run.iter().any(|a| !a.is_smc());
        let uses_smc = self.algorithms.run.iter().any(|a| a.is_smc());
        if uses_mcmc {
            ensure!(
                self.mcmc.burn_in < self.budget.simulations,
                "mcmc.burn_in must be below the simulation budget"
            );
        }
        if uses_smc {
            let total =
                self.smc.particles * (self.smc.targets + self.smc.extra_early_targets);
            ensure!(
                total == self.budget.simulations,
                "budget accounting: smc.particles × (targets + extra_early_targets) = {total} \
                 must equal budget.simulations = {}",
                self.budget.simulations
            );
        }
        Ok(())
    }

    pub fn mcmc_config(&self) -> msmc_core::mcmc::McmcConfig {
        msmc_core::mcmc::McmcConfig {
            iterations: self.budget.simulations,
            burn_in: self.mcmc.burn_in,
            proposal_sd: self.mcmc.proposal_sd,
            sweeps: self.mcmc.sweeps,
        }
    }

    pub fn sav_anchor_policy(&self) -> msmc_core::mcmc::AnchorPolicy {
        match self.mcmc.sav_anchor {
            SavAnchorKind::Trailing => msmc_core::mcmc::AnchorPolicy::Trailing {
                warmup: self.mcmc.sav_warmup,
                window: self.mcmc.sav_window,
            },
            SavAnchorKind::FixedAfterWarmup => msmc_core::mcmc::AnchorPolicy::FixedAfterWarmup {
                warmup: self.mcmc.sav_warmup,
                window: self.mcmc.sav_window,
            },
        }
    }

    pub fn smc_config(&self) -> anyhow::Result<msmc_core::smc::SmcConfig> {
        let mut cfg = msmc_core::smc::SmcConfig::new(
            self.smc.particles,
            self.smc.targets,
            self.smc.schedule_power,
            self.smc.sweeps,
        )?;
        cfg.ess_resample_threshold = self.smc.ess_resample_threshold;
        cfg.history_window = self.smc.history_window;
        cfg.extra_early_targets = self.smc.extra_early_targets;
        Ok(cfg)
    }
}
