//! Config-driven experiment orchestration: single runs, quantile sweeps,
//! and report generation over the produced output directories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{method_from_parts, ExperimentConfig};
use crate::data::{dirichlet_partition, repair_min_samples, split_train_test, PartitionPlan};
use crate::decouple::MaskPartition;
use crate::error::{Error, Result};
use crate::federation::{
    init_federation, run_round, save_checkpoint, Hyper, Method, ServerStateG,
};
use crate::metrics::{
    mean_std, read_metrics_csv, write_comm_csv, write_metrics_csv, write_per_client_csv,
    CommRecord, RoundMetrics,
};

/// Everything one seed produced in memory.
pub struct SeedRun {
    pub seed: u64,
    pub rounds: Vec<RoundMetrics>,
    pub comm: Vec<CommRecord>,
    pub masks: Vec<(usize, usize, MaskPartition)>,
    /// Personalized-set sizes of the final round's participants, by client.
    pub final_personalized: Vec<(usize, usize)>,
    pub server: ServerStateG<f64>,
}

impl SeedRun {
    pub fn final_mean_acc(&self) -> f64 {
        self.rounds.last().map(|m| m.mean_acc).unwrap_or(0.0)
    }
}

/// Cross-seed result written to `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub q: f64,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub per_seed_final_acc: Vec<(u64, f64)>,
    pub final_mean_acc: f64,
    pub final_std_acc: f64,
    /// Exact copy of the resolved configuration.
    pub config_text: String,
}

/// One quantile-sweep measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub q: f64,
    pub score: String,
    pub final_mean_acc: f64,
    pub personalized_count: usize,
}

/// Build the partition used by a run: Dirichlet split, lifted to at least
/// two samples per client so a train/test split always exists.
pub fn prepare_partition(cfg: &ExperimentConfig, seed: u64) -> Result<(crate::Dataset, PartitionPlan)> {
    let dataset = cfg.load_dataset(seed)?;
    let mut plan = dirichlet_partition(&dataset, cfg.n_clients, cfg.alpha, seed)?;
    repair_min_samples(&mut plan, 2)?;
    let plan = split_train_test(&plan, &dataset, cfg.test_fraction, seed)?;
    Ok((dataset, plan))
}

/// Run every round of one seed with the given method.
pub fn run_seed(cfg: &ExperimentConfig, method: &Method, seed: u64) -> Result<SeedRun> {
    let (dataset, plan) = prepare_partition(cfg, seed)?;
    let spec = cfg.model_spec(dataset.input_shape(), dataset.num_classes);
    spec.validate()?;
    let (mut server, mut clients) = init_federation(&spec, &plan.assignments, method, seed)?;
    let hyper = Hyper {
        eta: cfg.eta,
        local_epochs: cfg.local_epochs,
        batch_size: cfg.batch_size,
    };

    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut comm = Vec::new();
    let mut masks = Vec::new();
    let mut final_personalized = Vec::new();
    for _ in 0..cfg.rounds {
        let outcome = run_round(
            &mut server,
            &mut clients,
            &spec,
            &dataset,
            method,
            &hyper,
            cfg.gamma,
            seed,
        )?;
        comm.extend(outcome.comm);
        if cfg.export_masks {
            for (client, mask) in &outcome.masks {
                masks.push((outcome.metrics.round, *client, mask.clone()));
            }
        }
        final_personalized = outcome
            .masks
            .iter()
            .map(|(client, mask)| (*client, mask.personalized_count()))
            .collect();
        rounds.push(outcome.metrics);
    }
    Ok(SeedRun { seed, rounds, comm, masks, final_personalized, server })
}

fn seed_dir(output_dir: &Path, seed: u64) -> PathBuf {
    output_dir.join(format!("seed_{seed}"))
}

fn write_seed_outputs(cfg: &ExperimentConfig, output_dir: &Path, run: &SeedRun) -> Result<()> {
    let dir = seed_dir(output_dir, run.seed);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_metrics_csv(&dir.join("metrics.csv"), &run.rounds)?;
    write_per_client_csv(&dir.join("per_client.csv"), &run.rounds)?;
    write_comm_csv(&dir.join("comm.csv"), &run.comm)?;
    save_checkpoint(&dir.join("checkpoint.bin"), &run.server)?;
    if cfg.export_masks {
        let rows: Vec<(usize, usize, &MaskPartition)> =
            run.masks.iter().map(|(r, c, m)| (*r, *c, m)).collect();
        crate::decouple::write_masks_csv(&dir.join("masks.csv"), &rows)?;
    }
    Ok(())
}

fn run_all_seeds(cfg: &ExperimentConfig, method: &crate::federation::Method) -> Result<Vec<SeedRun>> {
    cfg.seeds.par_iter().map(|&seed| run_seed(cfg, method, seed)).collect()
}

fn write_outputs(
    cfg: &ExperimentConfig,
    method: &crate::federation::Method,
    output_dir: &Path,
    runs: &[SeedRun],
) -> Result<Summary> {
    std::fs::create_dir_all(output_dir)
        .map_err(|e| Error::io(output_dir.display().to_string(), e))?;
    std::fs::write(output_dir.join("config.txt"), cfg.to_text())
        .map_err(|e| Error::io(output_dir.display().to_string(), e))?;
    for run in runs {
        write_seed_outputs(cfg, output_dir, run)?;
    }

    let per_seed: Vec<(u64, f64)> = runs.iter().map(|r| (r.seed, r.final_mean_acc())).collect();
    let accs: Vec<f64> = per_seed.iter().map(|&(_, a)| a).collect();
    let (mean, std) = mean_std(&accs);
    let summary = Summary {
        method: method.name(),
        q: cfg.q,
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        per_seed_final_acc: per_seed,
        final_mean_acc: mean,
        final_std_acc: std,
        config_text: cfg.to_text(),
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::InvalidArgument(format!("summary serialization: {e}")))?;
    std::fs::write(output_dir.join("summary.json"), json)
        .map_err(|e| Error::io(output_dir.display().to_string(), e))?;
    Ok(summary)
}

/// Execute the configured experiment for every seed and write all outputs
/// under `output_dir`: a config echo, per-seed CSVs and checkpoints, and a
/// cross-seed `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig, output_dir: &Path) -> Result<Summary> {
    cfg.validate()?;
    let method = cfg.method()?;
    let runs = run_all_seeds(cfg, &method)?;
    write_outputs(cfg, &method, output_dir, &runs)
}

/// One full experiment per (score, quantile) pair. Emits `sweep.csv` with
/// `q,score,final_mean_acc,personalized_count` rows; the count is the
/// final-round personalized-set size of the lowest-id participant.
pub fn run_sweep(cfg: &ExperimentConfig, output_dir: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if cfg.sweep_q.is_empty() || cfg.sweep_scores.is_empty() {
        return Err(Error::InvalidConfig("sweep.q and sweep.scores must not be empty".into()));
    }
    std::fs::create_dir_all(output_dir)
        .map_err(|e| Error::io(output_dir.display().to_string(), e))?;
    std::fs::write(output_dir.join("config.txt"), cfg.to_text())
        .map_err(|e| Error::io(output_dir.display().to_string(), e))?;

    let mut rows = Vec::new();
    for score in &cfg.sweep_scores {
        for &q in &cfg.sweep_q {
            let mut sub = cfg.clone();
            sub.method_name = score.clone();
            sub.q = q;
            let sub_dir = output_dir.join(format!("sweep_{score}_q{q}"));
            let method = sub.method()?;
            let runs = run_all_seeds(&sub, &method)?;
            let summary = write_outputs(&sub, &method, &sub_dir, &runs)?;
            let personalized_count = runs
                .first()
                .and_then(|r| r.final_personalized.first())
                .map(|&(_, n)| n)
                .unwrap_or(0);
            rows.push(SweepRow {
                q,
                score: score.clone(),
                final_mean_acc: summary.final_mean_acc,
                personalized_count,
            });
        }
    }

    let mut csv = String::from("q,score,final_mean_acc,personalized_count\n");
    for row in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            row.q, row.score, row.final_mean_acc, row.personalized_count
        );
    }
    std::fs::write(output_dir.join("sweep.csv"), csv)
        .map_err(|e| Error::io(output_dir.display().to_string(), e))?;
    Ok(rows)
}

pub fn parse_sweep_csv(text: &str, path_for_errors: &str) -> Result<Vec<SweepRow>> {
    let malformed = |reason: String| Error::Malformed { path: path_for_errors.into(), reason };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| malformed("empty file".into()))?;
    if header != "q,score,final_mean_acc,personalized_count" {
        return Err(malformed(format!("unexpected header `{header}`")));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(malformed(format!("bad row `{line}`")));
        }
        rows.push(SweepRow {
            q: fields[0].parse().map_err(|_| malformed(format!("bad q `{}`", fields[0])))?,
            score: fields[1].to_string(),
            final_mean_acc: fields[2]
                .parse()
                .map_err(|_| malformed(format!("bad accuracy `{}`", fields[2])))?,
            personalized_count: fields[3]
                .parse()
                .map_err(|_| malformed(format!("bad count `{}`", fields[3])))?,
        });
    }
    Ok(rows)
}

/// Consolidate every run under `output_dir` into a text report: final
/// accuracy per method (sorted by method name), the best quantile per score
/// when a sweep is present, and the final-round layer distribution.
pub fn report(output_dir: &Path) -> Result<String> {
    let mut entries: Vec<(String, Summary, PathBuf)> = Vec::new();
    collect_summaries(output_dir, &mut entries)?;
    if entries.is_empty() {
        return Err(Error::Malformed {
            path: output_dir.display().to_string(),
            reason: "no summary.json found".into(),
        });
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0).then(a.2.cmp(&b.2)));

    let mut out = String::new();
    let _ = writeln!(out, "method            q        mean_acc  std_acc   dir");
    for (method, summary, dir) in &entries {
        let _ = writeln!(
            out,
            "{:<16}  {:<7}  {:<8.4}  {:<8.4}  {}",
            method,
            summary.q,
            summary.final_mean_acc,
            summary.final_std_acc,
            dir.display()
        );
    }

    let sweep_path = output_dir.join("sweep.csv");
    if sweep_path.exists() {
        let text = std::fs::read_to_string(&sweep_path)
            .map_err(|e| Error::io(sweep_path.display().to_string(), e))?;
        let rows = parse_sweep_csv(&text, &sweep_path.display().to_string())?;
        let mut scores: Vec<String> = rows.iter().map(|r| r.score.clone()).collect();
        scores.sort();
        scores.dedup();
        let _ = writeln!(out, "\npeak quantile per score:");
        for score in scores {
            let best = rows
                .iter()
                .filter(|r| r.score == score)
                .max_by(|a, b| a.final_mean_acc.partial_cmp(&b.final_mean_acc).unwrap());
            if let Some(best) = best {
                let _ = writeln!(
                    out,
                    "  {:<10} q={:<8} acc={:.4} personalized={}",
                    score, best.q, best.final_mean_acc, best.personalized_count
                );
            }
        }
    }

    // Final-round layer distribution, averaged over seeds, for each entry.
    let _ = writeln!(out, "\nfinal-round personalized-parameter distribution:");
    for (method, summary, dir) in &entries {
        let mut per_layer: Vec<(String, f64)> = Vec::new();
        let mut n_seeds = 0usize;
        for seed in &summary.seeds {
            let metrics_path = seed_dir(dir, *seed).join("metrics.csv");
            let rounds = read_metrics_csv(&metrics_path)?;
            let Some(last) = rounds.last() else { continue };
            if per_layer.is_empty() {
                per_layer = last.personalized_fraction_by_layer.clone();
            } else {
                for (acc, (_, f)) in per_layer.iter_mut().zip(&last.personalized_fraction_by_layer)
                {
                    acc.1 += f;
                }
            }
            n_seeds += 1;
        }
        if n_seeds > 1 {
            for f in per_layer.iter_mut() {
                f.1 /= n_seeds as f64;
            }
        }
        let cells: Vec<String> =
            per_layer.iter().map(|(name, f)| format!("{name}={f:.3}")).collect();
        let _ = writeln!(out, "  {:<16} {}", method, cells.join(" "));
    }
    Ok(out)
}

fn collect_summaries(dir: &Path, out: &mut Vec<(String, Summary, PathBuf)>) -> Result<()> {
    let summary_path = dir.join("summary.json");
    if summary_path.exists() {
        let text = std::fs::read_to_string(&summary_path)
            .map_err(|e| Error::io(summary_path.display().to_string(), e))?;
        let summary: Summary = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: summary_path.display().to_string(),
            reason: e.to_string(),
        })?;
        out.push((summary.method.clone(), summary, dir.to_path_buf()));
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut subdirs: Vec<PathBuf> =
        entries.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
    subdirs.sort();
    for sub in subdirs {
        if sub.file_name().map(|n| n.to_string_lossy().starts_with("seed_")).unwrap_or(false) {
            continue;
        }
        collect_summaries(&sub, out)?;
    }
    Ok(())
}

/// Convenience used by sweeps and tests: the method for a score name at a
/// given quantile with the run's configured normalization.
pub fn score_method(cfg: &ExperimentConfig, score: &str, q: f64) -> Result<Method> {
    method_from_parts(score, q, cfg.norm, cfg.cls_only, &cfg.fixed_layers)
}

/// Install a rayon pool of the requested size and run `f` inside it.
/// `None` keeps the default global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        None => f(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .expect("thread pool construction");
            pool.install(f)
        }
    }
}
