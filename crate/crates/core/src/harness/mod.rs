//! Seeded experiment sweeps: every policy runs once per seed to the
//! largest budget, and one record per budget checkpoint is read off the
//! truncated tree.

mod config;
mod records;
mod summary;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::generator::Generator;
use crate::metrics::tree_metrics;
use crate::multigen::{top_k, usage_fractions};
use crate::policy::{run_search_on, PolicyConfig, SearchOutcome};
use crate::seed::{derive_seed, label};
use crate::tree::{GeneratorId, NodeId};

pub use config::{ExperimentConfig, GeneratorSpec, SweepGrid};
pub use records::{read_records, read_records_file, RecordRead, RecordWriter, RunRecord};
pub use summary::{aggregate, competition_ranks, format_summary, Estimate, Summary, SummaryRow};

/// Seed of run `seed_index` in an experiment rooted at `root_seed`. All
/// policies share it, so they see the same generator streams.
pub fn run_seed(root_seed: u64, seed_index: u64) -> u64 {
    derive_seed(root_seed, &[label::RUN, seed_index])
}

/// Totals over a finished sweep.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub runs: usize,
    pub records: usize,
    pub aborted_runs: usize,
    pub generator_faults: usize,
}

impl ExperimentReport {
    /// Some generator misbehaved or went away during the sweep.
    pub fn partial_failure(&self) -> bool {
        self.aborted_runs > 0 || self.generator_faults > 0
    }
}

/// Checkpoint records for one finished run.
pub fn checkpoint_records(
    outcome: &SearchOutcome,
    policy: &PolicyConfig,
    budgets: &[usize],
    pass_k: &[usize],
    thresholds: &[Option<f64>],
    seed_index: u64,
    seed: u64,
) -> Vec<RunRecord> {
    let known = |id: NodeId, tree: &crate::tree::SearchTree| -> Option<bool> {
        let g = tree.at(id).generator().unwrap_or(GeneratorId(0)).index();
        let theta = thresholds.get(g).copied().flatten()?;
        Some(outcome.latents.get(&id).is_some_and(|q| *q >= theta))
    };
    let oracle = thresholds.iter().all(Option::is_some);
    budgets
        .iter()
        .map(|&b| {
            let tree = outcome.tree.truncated(b as u64);
            let n = tree.answer_count();
            let best = tree.select_best().ok();
            let pass_at_k = if oracle {
                pass_k
                    .iter()
                    .map(|&k| {
                        let hit = top_k(&tree, k)
                            .into_iter()
                            .any(|id| known(id, &tree) == Some(true));
                        (k, hit)
                    })
                    .collect()
            } else {
                BTreeMap::new()
            };
            RunRecord {
                policy: policy.label(),
                kind: policy.kind,
                budget: b,
                seed: seed_index,
                run_seed: seed,
                success: oracle.then(|| best.and_then(|id| known(id, &tree)).unwrap_or(false)),
                pass_at_k,
                best_score: best.and_then(|id| tree.at(id).score()),
                best_latent: best.and_then(|id| outcome.latents.get(&id).copied()),
                metrics: tree_metrics(&tree),
                generator_usage: usage_fractions(&tree, policy.generators),
                failed_generations: outcome.failed_generations(n),
                generator_faults: outcome.generator_faults(n),
                aborted: outcome.aborted.is_some() && n < b,
                wall_time_s: outcome
                    .commit_times
                    .get(n.wrapping_sub(1))
                    .copied()
                    .unwrap_or(0.0),
            }
        })
        .collect()
}

fn run_one(
    cfg: &ExperimentConfig,
    policy: &PolicyConfig,
    seed_index: u64,
) -> Result<SearchOutcome> {
    let mut owned: Vec<Box<dyn Generator>> = cfg
        .generators
        .iter()
        .map(GeneratorSpec::build)
        .collect::<Result<_>>()?;
    let mut gens: Vec<&mut dyn Generator> = owned
        .iter_mut()
        .map(|g| g.as_mut() as &mut dyn Generator)
        .collect();
    run_search_on(
        policy,
        &cfg.task,
        &mut gens,
        cfg.max_budget(),
        run_seed(cfg.root_seed, seed_index),
        cfg.batch,
    )
}

/// Run every (policy, seed) pair and hand each checkpoint record to
/// `sink` as soon as its run finishes. Runs execute on `cfg.threads`
/// workers; `sink` is only called from the calling thread.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    mut sink: impl FnMut(RunRecord) -> Result<()>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let thresholds: Vec<Option<f64>> = cfg
        .generators
        .iter()
        .map(|g| Ok(g.landscape()?.map(|p| p.success_threshold)))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..cfg.policies.len())
        .flat_map(|p| (0..cfg.seeds as u64).map(move |s| (p, s)))
        .collect();
    let threads = match cfg.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        t => t,
    }
    .min(jobs.len());

    let next = AtomicUsize::new(0);
    let mut report = ExperimentReport::default();
    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::channel::<Result<Vec<RunRecord>>>();
        for _ in 0..threads {
            let tx = tx.clone();
            let (next, jobs, thresholds) = (&next, &jobs, &thresholds);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(p, s)) = jobs.get(i) else { break };
                let policy = &cfg.policies[p];
                let result = run_one(cfg, policy, s).map(|outcome| {
                    checkpoint_records(
                        &outcome,
                        policy,
                        &cfg.budgets,
                        &cfg.pass_k,
                        thresholds,
                        s,
                        run_seed(cfg.root_seed, s),
                    )
                });
                if tx.send(result).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for result in rx {
            let records = match result {
                Ok(r) => r,
                Err(e) => {
                    // Stop handing out work; the workers drain quickly.
                    next.store(jobs.len(), Ordering::Relaxed);
                    return Err(e);
                }
            };
            report.runs += 1;
            if records.iter().any(|r| r.aborted) {
                report.aborted_runs += 1;
            }
            report.generator_faults += records.last().map_or(0, |r| r.generator_faults);
            for r in records {
                report.records += 1;
                sink(r)?;
            }
        }
        Ok(())
    })?;
    Ok(report)
}

/// Run an experiment and keep the records in memory.
pub fn collect_experiment(cfg: &ExperimentConfig) -> Result<(Vec<RunRecord>, ExperimentReport)> {
    let mut records = Vec::new();
    let report = run_experiment(cfg, |r| {
        records.push(r);
        Ok(())
    })?;
    Ok((records, report))
}

/// One point of a prior-sensitivity sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub field: String,
    pub value: f64,
    pub summary: Summary,
}

/// Re-run the experiment once per grid value with that prior field set on
/// every policy.
pub fn sensitivity_sweep(base: &ExperimentConfig, grid: &SweepGrid) -> Result<Vec<SweepPoint>> {
    grid.check(&base.policies)?;
    grid.values
        .iter()
        .map(|&value| {
            let mut cfg = base.clone();
            cfg.sweep = None;
            for p in &mut cfg.policies {
                p.set_prior(&grid.field, value)?;
            }
            let (records, _) = collect_experiment(&cfg)?;
            Ok(SweepPoint {
                field: grid.field.clone(),
                value,
                summary: aggregate(&records)?,
            })
        })
        .collect()
}

/// Records sorted by (policy, seed, budget), for stable output.
pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| (&a.policy, a.seed, a.budget).cmp(&(&b.policy, b.seed, b.budget)));
}
