//! Benchmark CLI for samplers targeting posteriors with intractable
//! normalising constants.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use msmc_cli::compare::{observation, run_comparison};
use msmc_cli::config::{AlgoId, ExperimentConfig};
use msmc_cli::data::{data_file, generate_data, write_data_json, write_data_text};
use msmc_cli::output::{write_comparison, write_mcmc_trace, write_smc_run};
use msmc_cli::runs::{replicate_seed, run_algorithm, RunArtifacts};
use msmc_cli::truth::ground_truth;
use msmc_cli::resolve_out_dir;
use msmc_core::ising::{brute_force_log_z, IsingModel, IsingSpec, NeighbourOrder};
use msmc_core::Theta;

#[derive(Parser)]
#[command(name = "msmc", version, about = "Marginal SMC and MCMC benchmarks for doubly intractable posteriors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one observation lattice by a long Gibbs run and persist it.
    GenerateData(GenerateDataArgs),
    /// Compute the reference posterior moments for a configuration.
    GroundTruth(ConfigArgs),
    /// Run a single algorithm once and dump its trace or particles.
    Run(RunArgs),
    /// Run every configured algorithm over all replicates and tabulate
    /// bias / sd / RMSE against the ground truth.
    Compare(ConfigArgs),
    /// Exhaustive-enumeration utilities for small lattices.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Args)]
struct GenerateDataArgs {
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long, value_parser = parse_order)]
    order: NeighbourOrder,
    /// Generating parameter, one value per component.
    #[arg(long, num_args = 1.., required = true)]
    theta: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    sweeps: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// JSON output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional plain-text grid copy.
    #[arg(long)]
    text: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: $MSMC_OUTPUT_DIR or ./msmc-out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = parse_algo)]
    algorithm: AlgoId,
    /// Replicate index selecting the derived seed.
    #[arg(long, default_value_t = 0)]
    replicate: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// log Z(θ) by full state enumeration.
    LogZ(OracleLogZArgs),
    /// Quadrature posterior over the prior box for a configuration.
    Posterior(OraclePosteriorArgs),
}

#[derive(Args)]
struct OracleLogZArgs {
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long, value_parser = parse_order)]
    order: NeighbourOrder,
    #[arg(long, num_args = 1.., required = true)]
    theta: Vec<f64>,
}

#[derive(Args)]
struct OraclePosteriorArgs {
    #[arg(long)]
    config: PathBuf,
    /// Grid points per dimension (default from the config's truth
    /// section).
    #[arg(long)]
    grid: Option<usize>,
}

fn parse_order(s: &str) -> Result<NeighbourOrder, String> {
    match s {
        "first" => Ok(NeighbourOrder::First),
        "second" => Ok(NeighbourOrder::Second),
        other => Err(format!("unknown order '{other}' (expected first|second)")),
    }
}

fn parse_algo(s: &str) -> Result<AlgoId, String> {
    for a in AlgoId::ALL {
        if a.to_string() == s {
            return Ok(a);
        }
    }
    Err(format!("unknown algorithm '{s}'"))
}

fn load_config(path: &PathBuf) -> anyhow::Result<(ExperimentConfig, String)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok((ExperimentConfig::from_toml(&text)?, text))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenerateData(args) => {
            let spec = IsingSpec::new(args.width, args.height, args.order)?;
            let model = IsingModel::new(spec);
            let theta = Theta(args.theta.clone());
            let (state, stats) = generate_data(&model, &theta, args.sweeps, args.seed)?;
            write_data_json(
                &args.out,
                &data_file(&model, &state, &stats, &theta, args.seed, args.sweeps),
            )?;
            if let Some(text) = &args.text {
                write_data_text(text, &state)?;
            }
            println!("wrote {} (S = {:?})", args.out.display(), stats.0);
            Ok(ExitCode::SUCCESS)
        }
        Command::GroundTruth(args) => {
            let (cfg, _) = load_config(&args.config)?;
            let model = IsingModel::new(cfg.model.spec()?);
            let y_stats = observation(&cfg, &model)?;
            let truth = ground_truth(&model, &cfg.prior, &y_stats, &cfg.truth)?;
            let dir = resolve_out_dir(args.out);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("ground_truth.json");
            let mut text = serde_json::to_string_pretty(&truth)?;
            text.push('\n');
            std::fs::write(&path, text)?;
            println!("wrote {} (method {}, mean {:?})", path.display(), truth.method, truth.mean);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            let (cfg, _) = load_config(&args.config)?;
            let model = IsingModel::new(cfg.model.spec()?);
            let y_stats = observation(&cfg, &model)?;
            let seed = replicate_seed(cfg.budget.master_seed, args.replicate);
            let artifacts =
                run_algorithm(&model, &y_stats, &cfg.prior, &cfg, args.algorithm, seed)?;
            let dir = resolve_out_dir(args.out).join(args.algorithm.to_string());
            match &artifacts {
                RunArtifacts::Mcmc(run) => write_mcmc_trace(&dir, run, cfg.mcmc.burn_in)?,
                RunArtifacts::Smc(run) => write_smc_run(&dir, run)?,
            }
            let summary = serde_json::json!({
                "algorithm": args.algorithm.to_string(),
                "replicate": args.replicate,
                "seed": seed,
                "estimate": artifacts.estimate(),
                "simulations": artifacts.simulations(),
            });
            let mut text = serde_json::to_string_pretty(&summary)?;
            text.push('\n');
            std::fs::write(dir.join("summary.json"), text)?;
            println!("wrote {} (estimate {:?})", dir.display(), artifacts.estimate());
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare(args) => {
            let (cfg, text) = load_config(&args.config)?;
            let out = run_comparison(&cfg)?;
            let dir = resolve_out_dir(args.out);
            write_comparison(&dir, &text, &out)?;
            for row in &out.rows {
                println!(
                    "{:<10} theta{}  bias {:>12.5e}  sd {:>12.5e}  rmse {:>12.5e}{}",
                    row.algorithm.to_string(),
                    row.component,
                    row.bias,
                    row.sd,
                    row.rmse,
                    if row.flagged { "  [flagged]" } else { "" }
                );
            }
            if out.flagged {
                eprintln!("one or more replicates aborted; see estimates.csv");
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle(OracleCommand::LogZ(args)) => {
            let spec = IsingSpec::new(args.width, args.height, args.order)?;
            let model = IsingModel::new(spec);
            let log_z = brute_force_log_z(&model, &Theta(args.theta.clone()))?;
            println!("{}", serde_json::json!({ "theta": args.theta, "log_z": log_z }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle(OracleCommand::Posterior(args)) => {
            let (mut cfg, _) = load_config(&args.config)?;
            if let Some(grid) = args.grid {
                cfg.truth.grid_per_dim = grid;
            }
            cfg.truth.method = msmc_cli::config::TruthMethod::Quadrature;
            let model = IsingModel::new(cfg.model.spec()?);
            let y_stats = observation(&cfg, &model)?;
            let truth = ground_truth(&model, &cfg.prior, &y_stats, &cfg.truth)?;
            println!("{}", serde_json::to_string_pretty(&truth)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
