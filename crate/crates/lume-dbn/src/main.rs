//! Command-line runner for the LUME-DBN experiment pipeline.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use lume_dbn::baselines::{learn_complete, mice_impute, temporal_mice_impute, MiceConfig};
use lume_dbn::config::{ExperimentConfig, Mode};
use lume_dbn::diagnostics::{
    auc_pr, burn_in_thin, inclusion_probabilities, posterior_mean_imputations, threshold_network,
    InclusionMatrix,
};
use lume_dbn::grid::{emit_report, read_summary_csv, run_grid};
use lume_dbn::io::{
    bin_time, fmt_f64, load_groups_csv, load_long_csv, load_long_records, save_long_csv,
    standardize, Standardization,
};
use lume_dbn::model::TimeSeriesDataset;
use lume_dbn::sampler::{run_lume_dbn, PosteriorTrace, TraceRecord};
use lume_dbn::seeds::derive_seed;
use lume_dbn::synth::{generate_random_dbn, inject_mcar, simulate_series};
use lume_dbn::{Error, Result};

#[derive(Parser)]
#[command(name = "lume-dbn", about = "Bayesian DBN structure learning from incomplete time series", version)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for chains and grid conditions (default: all cores).
    #[arg(long, global = true)]
    parallelism: Option<usize>,

    /// Inclusion-probability cutoff for network export.
    #[arg(long, global = true, default_value_t = 0.8)]
    threshold: f64,

    /// Input dataset (long-format CSV) for learn/baseline/diagnose.
    #[arg(long, global = true)]
    data: Option<PathBuf>,

    /// Optional sample_id,group CSV for local standardization/filtering.
    #[arg(long, global = true)]
    groups: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random ground-truth DBN and simulate series from it.
    Simulate,
    /// Run the LUME-DBN sampler on a dataset with missing values.
    Learn,
    /// Run a chained-equations baseline (variant chosen by config mode).
    Baseline,
    /// Score an inclusion matrix against a ground-truth adjacency.
    Evaluate {
        #[arg(long)]
        inclusion: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Run the sampler and emit convergence diagnostics only.
    Diagnose,
    /// Run the full (replicate x rate x method) experiment grid.
    Grid,
    /// Re-emit plot-ready report files from a grid's summary CSV.
    Report,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.parallelism {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }

    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.mcmc.seed = seed;
        cfg.generator.seed = seed;
    }
    fs::create_dir_all(&cfg.output_dir)?;

    match cli.command {
        Command::Simulate => simulate(&cfg),
        Command::Learn => learn(&cfg, &cli),
        Command::Baseline => baseline(&cfg, &cli),
        Command::Evaluate { inclusion, truth } => evaluate(&cfg, &inclusion, &truth),
        Command::Diagnose => diagnose(&cfg, &cli),
        Command::Grid => {
            let summaries = run_grid(&cfg)?;
            println!(
                "grid complete: {} conditions summarized in {}",
                summaries.len(),
                cfg.output_dir.join("summary.csv").display()
            );
            Ok(())
        }
        Command::Report => {
            let summaries = read_summary_csv(&cfg.output_dir.join("summary.csv"))?;
            emit_report(&summaries, &cfg.output_dir)?;
            println!("report written to {}", cfg.output_dir.display());
            Ok(())
        }
    }
}

fn simulate(cfg: &ExperimentConfig) -> Result<()> {
    let mut gen_rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.generator.seed, &[1]));
    let truth = generate_random_dbn(&cfg.generator, &mut gen_rng);
    let mut sim_rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.generator.seed, &[2]));
    let complete = simulate_series(&truth, cfg.generator.n_series, cfg.generator.t_len, &mut sim_rng)?;

    let rate = cfg.missingness_rates.first().copied().unwrap_or(0.0);
    let mut inj_rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.generator.seed, &[3]));
    let observed = if rate > 0.0 {
        inject_mcar(&complete, rate, &mut inj_rng)
    } else {
        complete.clone()
    };

    save_long_csv(&complete, &cfg.output_dir.join("data_complete.csv"))?;
    save_long_csv(&observed, &cfg.output_dir.join("data.csv"))?;
    write_adjacency_csv(
        &cfg.output_dir.join("truth_adjacency.csv"),
        &truth.adjacency,
        &complete.variable_names,
    )?;
    fs::write(
        cfg.output_dir.join("truth_params.json"),
        serde_json::to_string_pretty(&truth)?,
    )?;
    println!(
        "simulated {} series of {} time points over {} variables ({} true arcs, rate {rate})",
        complete.n_samples(),
        complete.n_times(),
        complete.n_vars(),
        truth.n_arcs()
    );
    Ok(())
}

/// Ingestion plus optional binning, missingness filtering and
/// standardization, shared by learn/baseline/diagnose.
fn load_input(cfg: &ExperimentConfig, cli: &Cli) -> Result<TimeSeriesDataset> {
    let path = cli
        .data
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("data.csv"));
    let groups: Option<BTreeMap<String, String>> = match &cli.groups {
        Some(p) => Some(load_groups_csv(p)?),
        None => None,
    };
    let mut d = match cfg.time_bin_width {
        Some(w) => bin_time(&load_long_records(&path)?, w)?,
        None => load_long_csv(&path)?,
    };
    let (reduced, report) = lume_dbn::io::filter_by_missingness(
        &d,
        cfg.missingness_filter_threshold,
        groups.as_ref(),
    )?;
    d = reduced;
    if !report.dropped.is_empty() {
        fs::write(
            cfg.output_dir.join("filter_report.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
    }
    if cfg.standardization != Standardization::None {
        let (z, record) = standardize(&d, cfg.standardization, groups.as_ref())?;
        fs::write(
            cfg.output_dir.join("standardization.json"),
            serde_json::to_string_pretty(&record)?,
        )?;
        d = z;
    }
    Ok(d)
}

fn pooled_retained<'a>(
    traces: &'a [PosteriorTrace],
    cfg: &ExperimentConfig,
) -> Result<Vec<&'a TraceRecord>> {
    let mut retained = Vec::new();
    for t in traces {
        retained.extend(burn_in_thin(t, cfg.mcmc.burn_in, cfg.mcmc.thinning)?);
    }
    Ok(retained)
}

fn learn(cfg: &ExperimentConfig, cli: &Cli) -> Result<()> {
    let d = load_input(cfg, cli)?;
    let traces = run_lume_dbn(&d, &cfg.priors, &cfg.mcmc)?;
    let retained = pooled_retained(&traces, cfg)?;
    let inclusion = inclusion_probabilities(&retained, d.n_vars())?;
    write_inclusion_csv(
        &cfg.output_dir.join("inclusion.csv"),
        &inclusion,
        &d.variable_names,
    )?;
    let network = threshold_network(&inclusion, cli.threshold)?;
    let adjacency: Vec<Vec<bool>> = (0..d.n_vars())
        .map(|i| (0..d.n_vars()).map(|j| network.has_arc(i, j)).collect())
        .collect();
    write_adjacency_csv(
        &cfg.output_dir.join("network.csv"),
        &adjacency,
        &d.variable_names,
    )?;
    write_trace_diagnostics(cfg, &traces)?;

    let cells = &traces[0].missing_cells;
    if !cells.is_empty() {
        let means = posterior_mean_imputations(&retained, cells.len())?;
        let mut imputed = d.clone();
        for (&(n, i, t), &v) in cells.iter().zip(&means) {
            imputed.set_value(n, i, t, v);
        }
        imputed.clear_mask();
        save_long_csv(&imputed, &cfg.output_dir.join("imputed.csv"))?;
    }
    println!(
        "learned inclusion matrix over {} variables from {} retained samples",
        d.n_vars(),
        retained.len()
    );
    Ok(())
}

fn baseline(cfg: &ExperimentConfig, cli: &Cli) -> Result<()> {
    let d = load_input(cfg, cli)?;
    let mice_cfg = MiceConfig {
        seed: cfg.mcmc.seed,
        ..MiceConfig::default()
    };
    let imputed = match cfg.mode {
        Mode::BaselineMice => mice_impute(&d, &mice_cfg)?,
        Mode::BaselineTemporalMice => temporal_mice_impute(&d, &mice_cfg)?,
        _ => {
            return Err(Error::Config(
                "baseline requires mode baseline-mice or baseline-temporal-mice".into(),
            ))
        }
    };
    let mut filled = imputed;
    filled.clear_mask();
    save_long_csv(&filled, &cfg.output_dir.join("imputed.csv"))?;

    let traces = learn_complete(&filled, &cfg.priors, &cfg.mcmc)?;
    let retained = pooled_retained(&traces, cfg)?;
    let inclusion = inclusion_probabilities(&retained, filled.n_vars())?;
    write_inclusion_csv(
        &cfg.output_dir.join("inclusion.csv"),
        &inclusion,
        &filled.variable_names,
    )?;
    println!("baseline imputation and structure learning complete");
    Ok(())
}

fn evaluate(cfg: &ExperimentConfig, inclusion_path: &Path, truth_path: &Path) -> Result<()> {
    let inclusion = read_inclusion_csv(inclusion_path)?;
    let truth = read_adjacency_csv(truth_path)?;
    let auc = auc_pr(&inclusion, &truth)?;
    let summary = serde_json::json!({ "auc_pr": auc });
    fs::write(
        cfg.output_dir.join("evaluation.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!("auc_pr {}", fmt_f64(auc));
    Ok(())
}

fn diagnose(cfg: &ExperimentConfig, cli: &Cli) -> Result<()> {
    let d = load_input(cfg, cli)?;
    if cfg.mcmc.chains < 2 {
        return Err(Error::Config("diagnostics need at least 2 chains".into()));
    }
    let traces = run_lume_dbn(&d, &cfg.priors, &cfg.mcmc)?;
    write_trace_diagnostics(cfg, &traces)?;
    println!(
        "diagnostics written to {}",
        cfg.output_dir.join("diagnostics.csv").display()
    );
    Ok(())
}

fn write_trace_diagnostics(cfg: &ExperimentConfig, traces: &[PosteriorTrace]) -> Result<()> {
    use lume_dbn::diagnostics::{arc_series, missing_series, phi_fraction, psrf};
    if traces.len() < 2 {
        return Ok(());
    }
    let arcs = arc_series(traces);
    let missing = missing_series(traces);
    let len = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    let stride = (cfg.mcmc.epochs / 50).max(2);
    let mut w = csv::Writer::from_path(cfg.output_dir.join("diagnostics.csv"))?;
    w.write_record(["epoch", "phi_arcs", "phi_missing", "psrf_max"])?;
    let mut e = stride.max(2);
    while e <= len {
        let phi_arcs = phi_fraction(&arcs, e, 1.1)?;
        let phi_missing = if missing.is_empty() {
            String::new()
        } else {
            fmt_f64(phi_fraction(&missing, e, 1.1)?)
        };
        let psrf_max = arcs
            .iter()
            .map(|s| psrf(&s.chains, e))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        w.write_record([e.to_string(), fmt_f64(phi_arcs), phi_missing, fmt_f64(psrf_max)])?;
        e += stride;
    }
    w.flush()?;
    Ok(())
}

fn write_inclusion_csv(path: &Path, m: &InclusionMatrix, names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["variable".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, row) in m.probs.iter().enumerate() {
        let mut rec = vec![names[i].clone()];
        rec.extend(row.iter().map(|p| fmt_f64(*p)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_inclusion_csv(path: &Path) -> Result<InclusionMatrix> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut probs = Vec::new();
    for row in reader.records() {
        let row = row?;
        let vals: Vec<f64> = row
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Ingestion(format!("non-numeric probability '{s}'")))
            })
            .collect::<Result<_>>()?;
        probs.push(vals);
    }
    Ok(InclusionMatrix { probs })
}

fn write_adjacency_csv(path: &Path, adjacency: &[Vec<bool>], names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["variable".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, row) in adjacency.iter().enumerate() {
        let mut rec = vec![names[i].clone()];
        rec.extend(row.iter().map(|&a| if a { "1" } else { "0" }.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_adjacency_csv(path: &Path) -> Result<Vec<Vec<bool>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut adjacency = Vec::new();
    for row in reader.records() {
        let row = row?;
        adjacency.push(row.iter().skip(1).map(|s| s.trim() == "1").collect());
    }
    Ok(adjacency)
}
