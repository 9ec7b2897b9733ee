//! `fedobp` command-line runner: dataset partitioning, single experiments,
//! quantile sweeps, and report consolidation.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use fedobp_core::config::ExperimentConfig;
use fedobp_core::data::{dirichlet_partition, repair_min_samples, split_train_test, write_plan};
use fedobp_core::experiment::{report, run_experiment, run_sweep, with_threads};

#[derive(Parser)]
#[command(name = "fedobp", version, about = "Deterministic personalized-FL simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Experiment configuration file (key = value lines). Defaults apply
    /// when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the configured seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (overrides output.dir from the config).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the Dirichlet partition plan for the configured dataset.
    Partition(CommonOpts),
    /// Run the configured experiment for every seed.
    Run(CommonOpts),
    /// Run one experiment per (sweep.q, sweep.scores) combination.
    Sweep(CommonOpts),
    /// Summarize the runs found under the output directory.
    Report(CommonOpts),
}

fn load_config(opts: &CommonOpts) -> Result<ExperimentConfig> {
    let mut cfg = match &opts.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = opts.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(output) = &opts.output {
        cfg.output_dir = output.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_partition(opts: &CommonOpts) -> Result<()> {
    let cfg = load_config(opts)?;
    let out_dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    std::fs::write(out_dir.join("config.txt"), cfg.to_text())
        .with_context(|| format!("writing config echo under {}", out_dir.display()))?;
    for &seed in &cfg.seeds {
        let dataset = cfg.load_dataset(seed)?;
        let mut plan = dirichlet_partition(&dataset, cfg.n_clients, cfg.alpha, seed)?;
        repair_min_samples(&mut plan, 2)?;
        let plan = split_train_test(&plan, &dataset, cfg.test_fraction, seed)?;
        let path = out_dir.join(format!("partition_seed_{seed}.csv"));
        write_plan(&path, &plan)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_run(opts: &CommonOpts) -> Result<()> {
    let cfg = load_config(opts)?;
    let out_dir = cfg.output_dir.clone();
    let summary = with_threads(opts.threads, || run_experiment(&cfg, &out_dir))?;
    println!(
        "method={} final_mean_acc={:.4} final_std_acc={:.4} output={}",
        summary.method,
        summary.final_mean_acc,
        summary.final_std_acc,
        out_dir.display()
    );
    Ok(())
}

fn cmd_sweep(opts: &CommonOpts) -> Result<()> {
    let cfg = load_config(opts)?;
    let out_dir = cfg.output_dir.clone();
    let rows = with_threads(opts.threads, || run_sweep(&cfg, &out_dir))?;
    for row in &rows {
        println!(
            "score={} q={} final_mean_acc={:.4} personalized={}",
            row.score, row.q, row.final_mean_acc, row.personalized_count
        );
    }
    println!("wrote {}", out_dir.join("sweep.csv").display());
    Ok(())
}

fn cmd_report(opts: &CommonOpts) -> Result<()> {
    let dir = match (&opts.output, &opts.config) {
        (Some(output), _) => output.clone(),
        (None, Some(_)) => load_config(opts)?.output_dir,
        (None, None) => ExperimentConfig::default().output_dir,
    };
    let text = report(&dir)?;
    print!("{text}");
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Partition(opts) => cmd_partition(opts),
        Command::Run(opts) => cmd_run(opts),
        Command::Sweep(opts) => cmd_sweep(opts),
        Command::Report(opts) => cmd_report(opts),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
