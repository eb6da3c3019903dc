//! Machine-readable outputs. Everything written here is deterministic:
//! fixed row orders, shortest-roundtrip float formatting, no timestamps —
//! two runs with the same configuration and master seed produce
//! byte-identical files.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use msmc_core::mcmc::McmcRun;
use msmc_core::smc::SmcRun;

use crate::compare::ComparisonOutput;
use crate::config::SCHEMA_VERSION;

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    config_toml: &'a str,
    files: Vec<String>,
    flagged: bool,
}

/// Write the full comparison bundle into `dir`:
/// `config.toml`, `manifest.json`, `metrics.{csv,json}`,
/// `estimates.csv`, `ess_traces.csv`, `path_hops.csv`,
/// `ground_truth.json`.
pub fn write_comparison(
    dir: &Path,
    config_text: &str,
    out: &ComparisonOutput,
) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str| -> PathBuf {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };

    std::fs::write(emit("config.toml"), config_text)?;
    write_json(&emit("ground_truth.json"), &out.truth)?;

    let metric_rows: Vec<Vec<String>> = out
        .rows
        .iter()
        .map(|r| {
            vec![
                r.algorithm.to_string(),
                r.component.to_string(),
                fmt(r.bias),
                fmt(r.sd),
                fmt(r.rmse),
                r.replicates_ok.to_string(),
                r.flagged.to_string(),
            ]
        })
        .collect();
    write_csv(
        &emit("metrics.csv"),
        &["algorithm", "component", "bias", "sd", "rmse", "replicates_ok", "flagged"],
        &metric_rows,
    )?;

    let mut estimate_rows = Vec::new();
    for o in &out.outcomes {
        match &o.estimate {
            Some(est) => {
                for (component, value) in est.iter().enumerate() {
                    estimate_rows.push(vec![
                        o.algorithm.to_string(),
                        o.replicate.to_string(),
                        component.to_string(),
                        fmt(*value),
                        o.simulations.to_string(),
                        "false".into(),
                        String::new(),
                    ]);
                }
            }
            None => estimate_rows.push(vec![
                o.algorithm.to_string(),
                o.replicate.to_string(),
                String::new(),
                String::new(),
                o.simulations.to_string(),
                "true".into(),
                o.error.clone().unwrap_or_default(),
            ]),
        }
    }
    write_csv(
        &emit("estimates.csv"),
        &["algorithm", "replicate", "component", "estimate", "simulations", "aborted", "error"],
        &estimate_rows,
    )?;

    let ess_rows: Vec<Vec<String>> = out
        .outcomes
        .iter()
        .flat_map(|o| {
            o.ess_trace.iter().map(|(target, nu, ess)| {
                vec![
                    o.algorithm.to_string(),
                    o.replicate.to_string(),
                    target.to_string(),
                    fmt(*nu),
                    fmt(*ess),
                ]
            })
        })
        .collect();
    write_csv(
        &emit("ess_traces.csv"),
        &["algorithm", "replicate", "target", "nu", "ess"],
        &ess_rows,
    )?;

    let hop_rows: Vec<Vec<String>> = out
        .outcomes
        .iter()
        .flat_map(|o| {
            o.path_hops.iter().map(|(target, hops, count)| {
                vec![
                    o.algorithm.to_string(),
                    o.replicate.to_string(),
                    target.to_string(),
                    hops.to_string(),
                    count.to_string(),
                ]
            })
        })
        .collect();
    write_csv(
        &emit("path_hops.csv"),
        &["algorithm", "replicate", "target", "hops", "count"],
        &hop_rows,
    )?;

    write_json(&emit("metrics.json"), out)?;

    let manifest_path = emit("manifest.json");
    let mut files: Vec<String> = written
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    files.sort();
    let manifest =
        Manifest { schema_version: SCHEMA_VERSION, config_toml: config_text, files, flagged: out.flagged };
    write_json(&manifest_path, &manifest)?;
    Ok(written)
}

/// Per-iteration trace of a single chain run.
pub fn write_mcmc_trace(dir: &Path, run: &McmcRun, burn_in: usize) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let d = run.trace[0].dim();
    let mut header: Vec<String> = vec!["iteration".into()];
    header.extend((0..d).map(|k| format!("theta{k}")));
    header.push("accepted".into());
    header.push("log_alpha".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();

    let rows: Vec<Vec<String>> = run
        .trace
        .iter()
        .enumerate()
        .map(|(i, theta)| {
            let iter = i + burn_in;
            let mut row = vec![iter.to_string()];
            row.extend(theta.0.iter().map(|v| fmt(*v)));
            row.push(run.accepted[iter].to_string());
            row.push(fmt(run.log_alpha[iter]));
            row
        })
        .collect();
    write_csv(&dir.join("trace.csv"), &header_refs, &rows)
}

/// Final particles and per-target diagnostics of one SMC run.
pub fn write_smc_run(dir: &Path, run: &SmcRun) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let d = run.particles.thetas[0].dim();

    let mut header: Vec<String> = vec!["particle".into()];
    header.extend((0..d).map(|k| format!("theta{k}")));
    header.push("log_weight".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows: Vec<Vec<String>> = run
        .particles
        .thetas
        .iter()
        .zip(&run.particles.log_weights)
        .enumerate()
        .map(|(p, (theta, lw))| {
            let mut row = vec![p.to_string()];
            row.extend(theta.0.iter().map(|v| fmt(*v)));
            row.push(fmt(*lw));
            row
        })
        .collect();
    write_csv(&dir.join("particles.csv"), &header_refs, &rows)?;

    let mut header: Vec<String> = vec!["target".into(), "nu".into(), "ess".into()];
    header.extend((0..d).map(|k| format!("theta_hat{k}")));
    header.extend((0..d).map(|k| format!("mean{k}")));
    header.extend((0..d).flat_map(|i| (0..d).map(move |j| format!("cov{i}{j}"))));
    header.push("low_ess".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows: Vec<Vec<String>> = run
        .diags
        .iter()
        .map(|diag| {
            let mut row = vec![diag.target.to_string(), fmt(diag.nu), fmt(diag.ess)];
            row.extend(diag.theta_hat.iter().map(|v| fmt(*v)));
            row.extend(diag.post_mean.iter().map(|v| fmt(*v)));
            row.extend(diag.post_cov.iter().map(|v| fmt(*v)));
            row.push(diag.low_ess.to_string());
            row
        })
        .collect();
    write_csv(&dir.join("diagnostics.csv"), &header_refs, &rows)?;

    let rows: Vec<Vec<String>> = run
        .diags
        .iter()
        .flat_map(|diag| {
            diag.path_hops.iter().map(|(hops, count)| {
                vec![diag.target.to_string(), hops.to_string(), count.to_string()]
            })
        })
        .collect();
    write_csv(&dir.join("path_hops.csv"), &["target", "hops", "count"], &rows)
}
