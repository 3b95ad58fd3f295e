//! The four experiment commands. Each one is idempotent for a fixed
//! config: outputs are rewritten deterministically on every run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use cascade_core::calibrate::{save_posteriors, PersistedPosterior};
use cascade_core::learn::{fit_cascade_calibrators, grid_search, online_run, Policy};
use cascade_core::metrics::{
    baseline_summary, delta_ibc, eval_probabilistic_deferral, ibc, EvalSummary,
};
use cascade_core::stats::{mean, sample_se};
use cascade_core::trace::{save_traces, split_calibration, synth_generate, Tier};

use crate::config::ExperimentConfig;

fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

/// Generate a synthetic trace file. Writes to `out` when given, otherwise
/// to the config's `trace_path`.
pub fn cmd_synth(config: &ExperimentConfig, out: Option<&Path>, seed: u64) -> Result<PathBuf> {
    let set = synth_generate(&config.synth, seed).context("synth")?;
    let path = match out {
        Some(dir) => dir.join("traces.jsonl"),
        None => config.trace_path.clone(),
    };
    save_traces(&set, &path).context("synth: writing trace file")?;
    println!(
        "synth: wrote {} records to {} (seed {seed})",
        set.records.len(),
        path.display()
    );
    Ok(path)
}

fn push_summary_row(
    out: &mut String,
    policy: &str,
    mode: &str,
    config: &ExperimentConfig,
    seed: u64,
    summary: &EvalSummary,
    // (IBC, delta-IBC); None renders as an empty (undefined) cell
    benefit: (Option<f64>, Option<f64>),
) {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(
        out,
        "{policy},{mode},{},{},{seed},{},{},{},{},{},{},{}",
        config.method,
        config.verifier,
        summary.n,
        summary.accuracy,
        summary.accuracy_se,
        summary.cost_per_sample,
        summary.cost_se,
        opt(benefit.0),
        opt(benefit.1)
    )
    .expect("write to string");
}

/// Cost-benefit analysis of the probabilistic-deferral policy against the
/// never-defer and always-defer baselines, with IBC and delta-IBC.
pub fn cmd_cost_benefit(config: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let set = config.load_traces()?;
    let mut rows = String::from(
        "policy,mode,method,verifier,seed,n,accuracy,accuracy_se,cost_per_sample,cost_se,ibc,delta_ibc_pct\n",
    );
    for &seed in &config.seeds {
        let (calib, stream) =
            split_calibration(&set, config.calib_n, seed).context("cost-benefit: split")?;
        let calibrators = fit_cascade_calibrators(
            &calib,
            config.method,
            config.verifier,
            config.prior_variance,
            0.0,
            seed,
        )
        .context("cost-benefit: calibration")?;
        save_posteriors(
            &[
                PersistedPosterior::new(
                    config.method,
                    config.verifier,
                    Tier::Base,
                    &calibrators.base,
                ),
                PersistedPosterior::new(
                    config.method,
                    config.verifier,
                    Tier::Large,
                    &calibrators.large,
                ),
            ],
            out_dir.join(format!("posteriors_seed{seed}.jsonl")),
        )
        .context("cost-benefit: saving posteriors")?;

        let base = baseline_summary(&stream, config.method, config.verifier, false)
            .context("cost-benefit: base baseline")?;
        let large = baseline_summary(&stream, config.method, config.verifier, true)
            .context("cost-benefit: large baseline")?;
        let ibc_base = ibc(
            base.accuracy,
            large.accuracy,
            base.cost_per_sample,
            large.cost_per_sample,
        )
        .ok();
        push_summary_row(
            &mut rows,
            "BASE_ONLY",
            "",
            config,
            seed,
            &base,
            (None, None),
        );
        push_summary_row(
            &mut rows,
            "LARGE_ONLY",
            "",
            config,
            seed,
            &large,
            (ibc_base, None),
        );
        for mode in config.deferral_mode.modes() {
            let summary =
                eval_probabilistic_deferral(&stream, &calibrators, mode, config.n_draws, seed)
                    .context("cost-benefit: evaluation")?;
            let ibc_cascade = ibc(
                base.accuracy,
                summary.accuracy,
                base.cost_per_sample,
                summary.cost_per_sample,
            )
            .ok();
            let delta = match (ibc_cascade, ibc_base) {
                (Some(c), Some(b)) => delta_ibc(c, b).ok(),
                _ => None,
            };
            push_summary_row(
                &mut rows,
                "CASCADE",
                mode.as_str(),
                config,
                seed,
                &summary,
                (ibc_cascade, delta),
            );
        }
    }
    let path = out_dir.join("cost_benefit.csv");
    write_text(&path, &rows)?;
    println!("cost-benefit: wrote {}", path.display());
    Ok(())
}

fn series_path(out_dir: &Path, label: &str, seed: u64) -> PathBuf {
    out_dir.join(format!("online_{}_seed{seed}.csv", label.to_lowercase()))
}

fn summary_block(label: &str, finals: &[f64]) -> String {
    format!(
        "{label},{},{},{}\n",
        finals.len(),
        mean(finals),
        sample_se(finals)
    )
}

/// Online threshold learning: every policy across every seed, plus the
/// grid-search baseline when requested.
pub fn cmd_online(config: &ExperimentConfig, out_dir: &Path, with_grid: bool) -> Result<()> {
    let set = config.load_traces()?;
    let mut summary = String::from("policy,n_seeds,mean_final_regret,se_final_regret\n");
    for policy in [Policy::Cascade, Policy::BaseOnly, Policy::LargeOnly] {
        let mut finals = Vec::with_capacity(config.seeds.len());
        for &seed in &config.seeds {
            let (calib, stream) =
                split_calibration(&set, config.calib_n, seed).context("online: split")?;
            let series = online_run(&calib, &stream, policy, &config.online_config(seed, 0.0))
                .with_context(|| format!("online: {policy} seed {seed}"))?;
            write_text(
                &series_path(out_dir, policy.as_str(), seed),
                &series.to_csv(),
            )?;
            finals.push(series.final_cumulative());
        }
        summary.push_str(&summary_block(policy.as_str(), &finals));
    }
    if with_grid {
        let mut finals = Vec::with_capacity(config.seeds.len());
        let mut thresholds = String::from("seed,phi_base,xi_base,xi_large\n");
        for &seed in &config.seeds {
            let (calib, stream) =
                split_calibration(&set, config.calib_n, seed).context("online: split")?;
            let (theta, series) = grid_search(
                &calib,
                &stream,
                &config.grid,
                &config.online_config(seed, 0.0),
            )
            .with_context(|| format!("online: grid search seed {seed}"))?;
            write_text(
                &series_path(out_dir, "CASCADE_GRID", seed),
                &series.to_csv(),
            )?;
            writeln!(
                thresholds,
                "{seed},{},{},{}",
                theta.phi_base, theta.xi_base, theta.xi_large
            )
            .expect("write to string");
            finals.push(series.final_cumulative());
        }
        summary.push_str(&summary_block("CASCADE_GRID", &finals));
        write_text(&out_dir.join("grid_thresholds.csv"), &thresholds)?;
    }
    let path = out_dir.join("online_summary.csv");
    write_text(&path, &summary)?;
    println!("online: wrote {}", path.display());
    Ok(())
}

/// Cascade regret as a growing fraction of calibration labels is flipped.
pub fn cmd_imperfect_expert(config: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let set = config.load_traces()?;
    let mut rows = String::from("corruption_fraction,seed,final_cumulative_regret,abstentions\n");
    let mut trend = String::from("corruption_fraction,n_seeds,mean_final_regret,se_final_regret\n");
    for &fraction in &config.corruption_fractions {
        let mut finals = Vec::with_capacity(config.seeds.len());
        for &seed in &config.seeds {
            let (calib, stream) =
                split_calibration(&set, config.calib_n, seed).context("imperfect-expert: split")?;
            let series = online_run(
                &calib,
                &stream,
                Policy::Cascade,
                &config.online_config(seed, fraction),
            )
            .with_context(|| format!("imperfect-expert: fraction {fraction} seed {seed}"))?;
            writeln!(
                rows,
                "{fraction},{seed},{},{}",
                series.final_cumulative(),
                series.abstention_count()
            )
            .expect("write to string");
            finals.push(series.final_cumulative());
        }
        writeln!(
            trend,
            "{fraction},{},{},{}",
            finals.len(),
            mean(&finals),
            sample_se(&finals)
        )
        .expect("write to string");
    }
    write_text(&out_dir.join("imperfect_expert.csv"), &rows)?;
    let path = out_dir.join("imperfect_expert_summary.csv");
    write_text(&path, &trend)?;
    println!("imperfect-expert: wrote {}", path.display());
    Ok(())
}
