//! `abmcts`: run experiments, aggregate records, sweep priors, export trees.
//!
//! Exit status: 0 on success, 1 for configuration or usage errors, 2 when
//! the command finished but a generator failed along the way.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use abmcts::export::{export_tree, import_tree, ExportFormat};
use abmcts::generator::Generator;
use abmcts::harness::{
    aggregate, format_summary, read_records_file, run_experiment, run_seed, sensitivity_sweep,
    ExperimentConfig, GeneratorSpec, RecordWriter, SweepGrid,
};
use abmcts::policy::{run_search_on, PolicyConfig, PolicyKind};
use abmcts::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "abmcts", version, about = "Adaptive-branching tree search experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every policy for every seed and write one record per checkpoint.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Record file (JSON lines); `-` for stdout. Overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Append to an existing record file instead of replacing it.
        #[arg(long)]
        append: bool,
    },
    /// Summarize record files: means, 95% intervals and ranks.
    Aggregate {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        /// Print the summary as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Re-run an experiment once per value of one prior hyperparameter.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Prior field to vary; overrides the config's `[sweep]` table.
        #[arg(long)]
        field: Option<String>,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Write all sweep summaries as one JSON document.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one search and export its tree, or convert an exported tree.
    ExportTree {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Convert this exported tree instead of running a search.
        #[arg(long, conflicts_with_all = ["config", "policy"])]
        input: Option<PathBuf>,
        /// Seed index of the run to export.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "dot")]
        format: ExportFormat,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Largest budget. Config checkpoints above it are dropped and it is
    /// added as the final checkpoint.
    #[arg(long)]
    budget: Option<usize>,
    /// Number of seeds per policy.
    #[arg(long)]
    seeds: Option<usize>,
    /// Policy kind or name; repeat to select several. Without a config
    /// each one runs with default settings.
    #[arg(long)]
    policy: Vec<String>,
    /// Landscape preset for a config-less run.
    #[arg(long, default_value = "deep-favored")]
    landscape: String,
    /// Expansions proposed per step.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    root_seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

enum Failure {
    Config(String),
    Generator(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::GeneratorUnavailable(m) => Failure::Generator(m),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

type CmdResult = Result<Outcome, Failure>;

/// A command that ran to the end, possibly with generator trouble.
#[derive(PartialEq)]
enum Outcome {
    Clean,
    Partial,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run { exp, out, append } => cmd_run(exp, out, append),
        Command::Aggregate { records, json } => cmd_aggregate(&records, json),
        Command::Sweep {
            exp,
            field,
            values,
            out,
        } => cmd_sweep(exp, field, values, out),
        Command::ExportTree {
            exp,
            input,
            seed,
            format,
            out,
        } => cmd_export(exp, input, seed, format, out),
    };
    match result {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => {
            eprintln!("warning: some generations failed at the generator");
            ExitCode::from(2)
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Generator(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn load_experiment(a: &ExperimentArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &a.config {
        Some(path) => {
            let mut cfg = ExperimentConfig::load(path)?;
            if !a.policy.is_empty() {
                cfg.policies.retain(|p| {
                    a.policy
                        .iter()
                        .any(|want| *want == p.label() || *want == p.kind.name())
                });
                if cfg.policies.is_empty() {
                    return Err(Failure::Config(format!(
                        "no policy in {} matches {:?}",
                        path.display(),
                        a.policy
                    )));
                }
            }
            cfg
        }
        None => {
            if a.policy.is_empty() {
                return Err(Failure::Config("give --config or at least one --policy".into()));
            }
            let policies = a
                .policy
                .iter()
                .map(|p| p.parse::<PolicyKind>().map(PolicyConfig::new))
                .collect::<abmcts::Result<Vec<_>>>()?;
            let budgets = (0..=7).map(|e| 1 << e).collect();
            let mut cfg = ExperimentConfig::new(policies, budgets, 10);
            cfg.generators = vec![GeneratorSpec::synthetic(&a.landscape)];
            cfg
        }
    };
    if let Some(b) = a.budget {
        cfg.budgets.retain(|x| *x < b);
        cfg.budgets.push(b);
    }
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(b) = a.batch {
        cfg.batch = b;
    }
    if let Some(r) = a.root_seed {
        cfg.root_seed = r;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    cfg.normalize();
    cfg.validate()?;
    Ok(cfg)
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        None => Box::new(io::stdout().lock()),
        Some(p) if p == Path::new("-") => Box::new(io::stdout().lock()),
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
    })
}

fn cmd_run(a: ExperimentArgs, out: Option<PathBuf>, append: bool) -> CmdResult {
    let cfg = load_experiment(&a)?;
    let target = out.or_else(|| cfg.out.clone());
    let mut records = Vec::new();
    let report = match target.as_deref() {
        Some(p) if p != Path::new("-") => {
            if !append && p.exists() {
                std::fs::remove_file(p)?;
            }
            let mut w = RecordWriter::append_to(p)?;
            run_experiment(&cfg, |r| {
                w.write(&r)?;
                records.push(r);
                Ok(())
            })?
        }
        _ => {
            let mut w = RecordWriter::new(io::stdout().lock());
            run_experiment(&cfg, |r| {
                w.write(&r)?;
                records.push(r);
                Ok(())
            })?
        }
    };
    let summary = aggregate(&records)?;
    eprint!("{}", format_summary(&summary));
    eprintln!(
        "{} runs, {} records, {} aborted, {} generator faults",
        report.runs, report.records, report.aborted_runs, report.generator_faults
    );
    Ok(if report.partial_failure() {
        Outcome::Partial
    } else {
        Outcome::Clean
    })
}

fn cmd_aggregate(paths: &[PathBuf], json: bool) -> CmdResult {
    let mut records = Vec::new();
    for p in paths {
        let read = read_records_file(p)?;
        if read.truncated {
            eprintln!("warning: {} ends in a partial line; ignored it", p.display());
        }
        records.extend(read.records);
    }
    let summary = aggregate(&records)?;
    let mut out = io::stdout().lock();
    if json {
        serde_json::to_writer_pretty(&mut out, &summary).map_err(io::Error::from)?;
        writeln!(out)?;
    } else {
        write!(out, "{}", format_summary(&summary))?;
    }
    let faulty = records.iter().any(|r| r.aborted || r.generator_faults > 0);
    Ok(if faulty { Outcome::Partial } else { Outcome::Clean })
}

fn cmd_sweep(
    a: ExperimentArgs,
    field: Option<String>,
    values: Option<Vec<f64>>,
    out: Option<PathBuf>,
) -> CmdResult {
    let cfg = load_experiment(&a)?;
    let grid = match (field, values, &cfg.sweep) {
        (Some(field), Some(values), _) => SweepGrid { field, values },
        (None, None, Some(g)) => g.clone(),
        (Some(field), None, Some(g)) => SweepGrid {
            field,
            values: g.values.clone(),
        },
        (None, Some(values), Some(g)) => SweepGrid {
            field: g.field.clone(),
            values,
        },
        _ => {
            return Err(Failure::Config(
                "sweep needs --field and --values or a [sweep] table".into(),
            ))
        }
    };
    let points = sensitivity_sweep(&cfg, &grid)?;
    for p in &points {
        println!("## {} = {}", p.field, p.value);
        print!("{}", format_summary(&p.summary));
    }
    if let Some(path) = out {
        let mut w = output(Some(&path))?;
        serde_json::to_writer_pretty(&mut w, &points).map_err(io::Error::from)?;
        writeln!(w)?;
    }
    Ok(Outcome::Clean)
}

fn cmd_export(
    a: ExperimentArgs,
    input: Option<PathBuf>,
    seed: u64,
    format: ExportFormat,
    out: Option<PathBuf>,
) -> CmdResult {
    let (tree, outcome) = match input {
        Some(path) => (import_tree(&std::fs::read_to_string(&path)?)?, Outcome::Clean),
        None => {
            let cfg = load_experiment(&a)?;
            let [policy] = cfg.policies.as_slice() else {
                return Err(Failure::Config(format!(
                    "export-tree runs one policy; select one of {} with --policy",
                    cfg.policies
                        .iter()
                        .map(PolicyConfig::label)
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            };
            let mut owned: Vec<Box<dyn Generator>> = cfg
                .generators
                .iter()
                .map(GeneratorSpec::build)
                .collect::<abmcts::Result<_>>()?;
            let mut gens: Vec<&mut dyn Generator> =
                owned.iter_mut().map(|g| g.as_mut() as &mut dyn Generator).collect();
            let result = run_search_on(
                policy,
                &cfg.task,
                &mut gens,
                cfg.max_budget(),
                run_seed(cfg.root_seed, seed),
                cfg.batch,
            )?;
            let n = result.tree.answer_count();
            let partial = result.aborted.is_some() || result.generator_faults(n) > 0;
            if let Some(why) = &result.aborted {
                eprintln!("warning: search stopped after {n} answers: {why}");
            }
            (
                result.tree,
                if partial { Outcome::Partial } else { Outcome::Clean },
            )
        }
    };
    let mut w = output(out.as_deref())?;
    export_tree(&tree, format, &mut w)?;
    w.flush()?;
    Ok(outcome)
}
