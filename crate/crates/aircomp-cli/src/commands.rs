//! One function per CLI command.

use std::path::{Path, PathBuf};

use rand::Rng;

use aircomp_fl::channel::{sample_rayleigh_channels, ChannelDraw, DeviceChannel, NoiseSpec};
use aircomp_fl::optimizer::{build_profile, lstar_by_interval, solve, sweep_beta, PowerSolution};
use aircomp_fl::oracle::{oracle_solve, OracleOptions};
use aircomp_fl::seed::derive_rng;
use aircomp_fl::sim::{median, run_experiment, Partition, RoundTrace, Scheme, TrainConfig};
use aircomp_fl::stats::GradientStats;

use crate::config::{OracleCheckConfig, RunConfig, SolveConfig};
use crate::output::{cell, write_json, write_manifest, CsvWriter};
use crate::CliError;

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn sweep_header(device_count: usize) -> Vec<String> {
    let mut header = vec!["beta".to_string(), "l_star".to_string()];
    header.extend((1..=device_count).map(|k| format!("p_{k}")));
    header.push("eta".to_string());
    header.push("mse_total".to_string());
    header
}

fn sweep_row(beta: f64, sol: &PowerSolution) -> Vec<String> {
    let mut row = vec![cell(beta), sol.l_star.to_string()];
    row.extend(sol.powers.iter().map(|&p| cell(p)));
    row.push(cell(sol.eta));
    row.push(cell(sol.mse.total));
    row
}

fn instance_channels(cfg: &SolveConfig) -> Result<Vec<DeviceChannel>, CliError> {
    if cfg.magnitudes.is_empty() {
        return Err(CliError::Config("magnitudes must list at least one device".into()));
    }
    let peaks = cfg.peak_powers()?;
    cfg.magnitudes
        .iter()
        .zip(peaks)
        .map(|(&h, p)| {
            ChannelDraw { magnitude: h, phase: 0.0 }
                .with_peak_power(p)
                .map_err(|e| CliError::Config(e.to_string()))
        })
        .collect()
}

pub fn cmd_sweep_beta(cfg: &SolveConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let channels = instance_channels(cfg)?;
    let profile =
        build_profile(&channels, cfg.alpha).map_err(|e| CliError::Config(e.to_string()))?;
    let noise = NoiseSpec::new(cfg.noise_variance, cfg.dimension)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let grid = cfg.beta_grid()?;
    let sols = sweep_beta(&profile, &noise, &grid).map_err(|e| CliError::Runtime(e.to_string()))?;
    let header = sweep_header(channels.len());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = CsvWriter::create(out.join("sweep_beta.csv"), &header_refs);
    for (beta, sol) in grid.iter().zip(&sols) {
        csv.row(&sweep_row(*beta, sol));
    }
    Ok(vec![csv.finish()?])
}

pub fn cmd_solve_once(cfg: &SolveConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let beta = cfg
        .beta
        .ok_or_else(|| CliError::Config("solve-once requires a beta value".into()))?
        .0;
    let channels = instance_channels(cfg)?;
    let profile =
        build_profile(&channels, cfg.alpha).map_err(|e| CliError::Config(e.to_string()))?;
    let noise = NoiseSpec::new(cfg.noise_variance, cfg.dimension)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let sol = solve(&profile, &GradientStats::new(cfg.alpha, beta), &noise)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut header = sweep_header(channels.len());
    header.extend(["mse_individual", "mse_composite", "mse_noise"].map(String::from));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = CsvWriter::create(out.join("solution.csv"), &header_refs);
    let mut row = sweep_row(beta, &sol);
    row.extend([cell(sol.mse.individual), cell(sol.mse.composite), cell(sol.mse.noise)]);
    csv.row(&row);
    Ok(vec![csv.finish()?])
}

#[derive(serde::Serialize)]
struct OracleReport {
    instances: usize,
    device_count: usize,
    max_relative_gap: f64,
    mean_relative_gap: f64,
    threshold_mismatches: usize,
    budget_exhausted: usize,
    total_evaluations: u64,
}

pub fn cmd_oracle_check(cfg: &OracleCheckConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if cfg.k == 0 || cfg.trials == 0 {
        return Err(CliError::Config("oracle-check needs k >= 1 and trials >= 1".into()));
    }
    let mut csv = CsvWriter::create(
        out.join("oracle_check.csv"),
        &[
            "trial",
            "beta",
            "alpha",
            "solve_mse",
            "oracle_mse",
            "relative_gap",
            "l_star_solve",
            "l_star_interval",
            "oracle_evaluations",
        ],
    );
    let mut max_gap = f64::NEG_INFINITY;
    let mut gap_sum = 0.0;
    let mut mismatches = 0usize;
    let mut exhausted = 0usize;
    let mut evals_total = 0u64;
    let options = OracleOptions { budget: cfg.budget, ..OracleOptions::default() };
    for trial in 0..cfg.trials {
        let mut rng = derive_rng(cfg.seed, &[cfg.k as u64, trial as u64]);
        let draws = sample_rayleigh_channels(cfg.k, rng.gen())
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let channels: Vec<DeviceChannel> = draws
            .into_iter()
            .map(|d| {
                let snr_db = uniform(&mut rng, cfg.snr_range_db[0], cfg.snr_range_db[1]);
                let reference = if cfg.noise_variance > 0.0 { cfg.noise_variance } else { 1.0 };
                d.with_peak_power(
                    10f64.powf(snr_db / 10.0) * cfg.dimension as f64 * reference,
                )
                .map_err(|e| CliError::Runtime(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        let alpha = log_uniform(&mut rng, cfg.alpha_range);
        let beta = log_uniform(&mut rng, cfg.beta_range);
        let noise = NoiseSpec::new(cfg.noise_variance, cfg.dimension)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let profile =
            build_profile(&channels, alpha).map_err(|e| CliError::Runtime(e.to_string()))?;
        let stats = GradientStats::new(alpha, beta);
        let sol = solve(&profile, &stats, &noise).map_err(|e| CliError::Runtime(e.to_string()))?;
        let oracle = oracle_solve(&profile, &stats, &noise, &options)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let by_interval = lstar_by_interval(&profile, &stats, &noise)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let gap = (sol.mse.total - oracle.solution.mse.total) / oracle.solution.mse.total;
        max_gap = max_gap.max(gap);
        gap_sum += gap;
        if by_interval != sol.l_star {
            mismatches += 1;
        }
        if oracle.budget_exhausted {
            exhausted += 1;
        }
        evals_total += oracle.evaluations;
        csv.row(&[
            trial.to_string(),
            cell(beta),
            cell(alpha),
            cell(sol.mse.total),
            cell(oracle.solution.mse.total),
            cell(gap),
            sol.l_star.to_string(),
            by_interval.to_string(),
            oracle.evaluations.to_string(),
        ]);
    }
    let report = OracleReport {
        instances: cfg.trials,
        device_count: cfg.k,
        max_relative_gap: max_gap,
        mean_relative_gap: gap_sum / cfg.trials as f64,
        threshold_mismatches: mismatches,
        budget_exhausted: exhausted,
        total_evaluations: evals_total,
    };
    println!(
        "oracle-check: {} instances at K={}, max relative gap {:.3e}, threshold mismatches {}",
        cfg.trials, cfg.k, max_gap, mismatches
    );
    Ok(vec![csv.finish()?, write_json(out.join("oracle_report.json"), &report)?])
}

fn log_uniform<R: rand::Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    let (lo, hi) = (range[0].ln(), range[1].ln());
    (lo + (hi - lo) * rng.gen::<f64>()).exp()
}

fn trace_header(device_count: usize) -> Vec<String> {
    let mut header = vec![
        "scheme".to_string(),
        "replicate".to_string(),
        "round".to_string(),
        "alpha_hat".to_string(),
        "beta_hat".to_string(),
        "eta".to_string(),
        "l_star".to_string(),
        "mse_analytic".to_string(),
        "recovered_norm".to_string(),
        "train_loss".to_string(),
        "test_accuracy".to_string(),
        "alpha_true".to_string(),
        "beta_true".to_string(),
    ];
    header.extend((1..=device_count).map(|k| format!("p_{k}")));
    header
}

fn trace_row(scheme: Scheme, replicate: usize, t: &RoundTrace, device_count: usize) -> Vec<String> {
    let mut row = vec![
        scheme.name().to_string(),
        replicate.to_string(),
        t.round.to_string(),
        cell(t.alpha_hat),
        cell(t.beta_hat),
        cell(t.eta),
        if t.powers.is_empty() { String::new() } else { t.l_star.to_string() },
        cell(t.mse_analytic),
        cell(t.recovered_norm),
        cell(t.train_loss),
        t.test_accuracy.map(cell).unwrap_or_default(),
        cell(t.alpha_true),
        cell(t.beta_true),
    ];
    if t.powers.is_empty() {
        row.extend(std::iter::repeat(String::new()).take(device_count));
    } else {
        row.extend(t.powers.iter().map(|&p| cell(p)));
    }
    row
}

#[derive(serde::Serialize)]
struct TraceLine<'a> {
    scheme: &'static str,
    replicate: usize,
    #[serde(flatten)]
    trace: &'a RoundTrace,
}

pub fn cmd_fl_run(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let train = cfg.to_train_config()?;
    let outcome = run_experiment(&train).map_err(|e| CliError::Runtime(e.to_string()))?;

    let header = trace_header(train.device_count);
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = CsvWriter::create(out.join("traces.csv"), &header_refs);
    let mut jsonl = String::new();
    for run in &outcome.runs {
        for trace in &run.traces {
            csv.row(&trace_row(run.scheme, run.replicate, trace, train.device_count));
            let line = TraceLine { scheme: run.scheme.name(), replicate: run.replicate, trace };
            jsonl.push_str(
                &serde_json::to_string(&line)
                    .map_err(|e| CliError::Runtime(format!("trace serialization failed: {e}")))?,
            );
            jsonl.push('\n');
        }
    }
    let csv_path = csv.finish()?;
    let jsonl_path = out.join("traces.jsonl");
    std::fs::write(&jsonl_path, jsonl.as_bytes())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", jsonl_path.display())))?;
    let summary_path = write_json(out.join("summary.json"), &outcome.summaries)?;
    for s in &outcome.summaries {
        println!(
            "fl-run: {} final accuracy median {:.4} (min {:.4}, max {:.4})",
            s.scheme.name(),
            s.median_final_accuracy,
            s.min_final_accuracy,
            s.max_final_accuracy
        );
    }
    Ok(vec![csv_path, jsonl_path, summary_path])
}

pub fn cmd_fig2_stats(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut csv = CsvWriter::create(
        out.join("gradient_stats.csv"),
        &["partition", "replicate", "round", "alpha_true", "beta_true", "train_loss"],
    );
    for partition in [Partition::Iid, Partition::NonIid] {
        let mut run_cfg = cfg.clone();
        run_cfg.partition = partition;
        let mut train = run_cfg.to_train_config()?;
        train.schemes = vec![Scheme::ErrorFree];
        let outcome = run_experiment(&train).map_err(|e| CliError::Runtime(e.to_string()))?;
        let name = match partition {
            Partition::Iid => "iid",
            Partition::NonIid => "noniid",
        };
        for run in &outcome.runs {
            for trace in &run.traces {
                csv.row(&[
                    name.to_string(),
                    run.replicate.to_string(),
                    trace.round.to_string(),
                    cell(trace.alpha_true),
                    cell(trace.beta_true),
                    cell(trace.train_loss),
                ]);
            }
        }
    }
    Ok(vec![csv.finish()?])
}

#[derive(serde::Serialize)]
struct GridSummary {
    grid_value: f64,
    scheme: &'static str,
    median_final_accuracy: f64,
    min_final_accuracy: f64,
    max_final_accuracy: f64,
}

fn grid_results(
    label: &str,
    values: &[f64],
    configs: Vec<TrainConfig>,
    out: &Path,
    file_stem: &str,
) -> Result<Vec<PathBuf>, CliError> {
    let mut csv = CsvWriter::create(
        out.join(format!("{file_stem}.csv")),
        &[label, "scheme", "replicate", "final_test_accuracy", "final_train_loss"],
    );
    let mut summaries = Vec::new();
    for (value, train) in values.iter().zip(configs) {
        let outcome = run_experiment(&train).map_err(|e| CliError::Runtime(e.to_string()))?;
        for run in &outcome.runs {
            csv.row(&[
                cell(*value),
                run.scheme.name().to_string(),
                run.replicate.to_string(),
                cell(run.final_test_accuracy),
                cell(run.final_train_loss),
            ]);
        }
        for scheme in &train.schemes {
            let acc: Vec<f64> = outcome
                .runs
                .iter()
                .filter(|r| r.scheme == *scheme)
                .map(|r| r.final_test_accuracy)
                .collect();
            summaries.push(GridSummary {
                grid_value: *value,
                scheme: scheme.name(),
                median_final_accuracy: median(&acc),
                min_final_accuracy: acc.iter().copied().fold(f64::INFINITY, f64::min),
                max_final_accuracy: acc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    Ok(vec![csv.finish()?, write_json(out.join(format!("{file_stem}_summary.json")), &summaries)?])
}

pub fn cmd_snr_sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let grid = cfg
        .snr_grid_db
        .clone()
        .unwrap_or_else(|| vec![0.0, 5.0, 10.0, 15.0, 20.0]);
    let mut configs = Vec::new();
    for &snr in &grid {
        let mut c = cfg.clone();
        c.snr_db = snr;
        configs.push(c.to_train_config()?);
    }
    grid_results("snr_db", &grid, configs, out, "snr_sweep")
}

pub fn cmd_device_sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let grid = cfg.device_grid.clone().unwrap_or_else(|| vec![2, 4, 5, 8, 10, 20]);
    let mut configs = Vec::new();
    for &k in &grid {
        let mut c = cfg.clone();
        c.device_count = k;
        configs.push(c.to_train_config()?);
    }
    let values: Vec<f64> = grid.iter().map(|&k| k as f64).collect();
    grid_results("device_count", &values, configs, out, "device_sweep")
}

/// Shared epilogue: write the manifest listing the produced files.
pub fn finish<C: serde::Serialize>(
    out: &Path,
    command: &str,
    seed: Option<u64>,
    config: &C,
    outputs: &[PathBuf],
) -> Result<(), CliError> {
    write_manifest(out, command, seed, config, outputs)
}
