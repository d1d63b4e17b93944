mod common;

use std::path::Path;

use abmcts::harness::{
    aggregate, checkpoint_records, collect_experiment, competition_ranks, read_records,
    run_seed, sensitivity_sweep, ExperimentConfig, GeneratorSpec, RecordWriter, RunRecord,
    SweepGrid,
};
use abmcts::policy::{run_search, PolicyConfig, PolicyKind};
use abmcts::synth::{LandscapeParams, SyntheticGenerator};
use abmcts::Error;

fn quick(kind: PolicyKind) -> PolicyConfig {
    let mut cfg = PolicyConfig::new(kind);
    cfg.mcmc.warmup = 200;
    cfg.mcmc.keep = 200;
    cfg
}

fn small_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        vec![quick(PolicyKind::AbmctsAGauss), quick(PolicyKind::RepeatedSampling)],
        vec![2, 8, 16],
        5,
    );
    cfg.root_seed = 17;
    cfg
}

#[test]
fn one_record_per_policy_budget_seed() {
    let (records, report) = collect_experiment(&small_experiment()).unwrap();
    assert_eq!(records.len(), 30);
    assert_eq!(report.runs, 10);
    assert!(!report.partial_failure());
    let mut keys: Vec<_> = records.iter().map(|r| (&r.policy, r.budget, r.seed)).collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), 30);
}

#[test]
fn thread_count_does_not_change_records() {
    let mut one = small_experiment();
    one.threads = 1;
    let mut many = small_experiment();
    many.threads = 4;
    let sorted = |cfg: &ExperimentConfig| {
        let mut r = collect_experiment(cfg).unwrap().0;
        abmcts::harness::sort_records(&mut r);
        r
    };
    let (a, b) = (sorted(&one), sorted(&many));
    assert!(a.iter().zip(&b).all(|(x, y)| x.same_outcome(y)));
}

#[test]
fn checkpoints_equal_fresh_runs() {
    let params = LandscapeParams::deep_favored();
    for kind in PolicyKind::ALL {
        let policy = quick(kind);
        let seed = run_seed(3, 0);
        let run = |budget| {
            let mut g = SyntheticGenerator::new(params).unwrap();
            run_search(&policy, &mut [&mut g], budget, seed, 1).unwrap()
        };
        let long = run(32);
        let thresholds = [Some(params.success_threshold)];
        let budgets = [1, 4, 9, 32];
        let from_long = checkpoint_records(&long, &policy, &budgets, &[1, 2], &thresholds, 0, seed);
        for (b, rec) in budgets.iter().zip(&from_long) {
            let fresh = checkpoint_records(&run(*b), &policy, &[*b], &[1, 2], &thresholds, 0, seed);
            assert!(rec.same_outcome(&fresh[0]), "{kind} at budget {b}");
        }
    }
}

#[test]
fn best_score_never_decreases_with_budget() {
    let (records, _) = collect_experiment(&small_experiment()).unwrap();
    for policy in ["abmcts-a-gauss", "repeated-sampling"] {
        for seed in 0..5 {
            let mut run: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.policy == policy && r.seed == seed)
                .collect();
            run.sort_by_key(|r| r.budget);
            for w in run.windows(2) {
                assert!(w[1].best_score >= w[0].best_score, "{policy} seed {seed}");
            }
        }
    }
}

#[test]
fn pass_at_k_over_all_candidates_is_any_success() {
    let params = LandscapeParams::default();
    let policy = quick(PolicyKind::RepeatedSampling);
    for seed in 0..20 {
        let mut g = SyntheticGenerator::new(params).unwrap();
        let out = run_search(&policy, &mut [&mut g], 6, seed, 1).unwrap();
        let rec = &checkpoint_records(&out, &policy, &[6], &[1, 6, 50], &[Some(0.9)], 0, seed)[0];
        let any = out.latents.values().any(|q| *q >= 0.9);
        assert_eq!(rec.pass_at_k[&6], any);
        assert_eq!(rec.pass_at_k[&50], any);
        assert_eq!(rec.pass_at_k[&1], rec.success.unwrap());
    }
}

#[test]
fn truncated_record_files_keep_the_complete_prefix() {
    let (records, _) = collect_experiment(&small_experiment()).unwrap();
    let mut w = RecordWriter::new(Vec::new());
    for r in &records[..5] {
        w.write(r).unwrap();
    }
    let bytes = w.into_inner();
    let back = read_records(&bytes[..]).unwrap();
    assert!(!back.truncated);
    assert_eq!(back.records, records[..5]);

    let cut = &bytes[..bytes.len() - 17];
    let partial = read_records(cut).unwrap();
    assert!(partial.truncated);
    assert_eq!(partial.records, records[..4]);
}

#[test]
fn appended_files_accumulate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.jsonl");
    let (records, _) = collect_experiment(&small_experiment()).unwrap();
    for chunk in records.chunks(7) {
        let mut w = RecordWriter::append_to(&path).unwrap();
        for r in chunk {
            w.write(r).unwrap();
        }
    }
    let back = abmcts::harness::read_records_file(&path).unwrap();
    assert_eq!(back.records, records);
}

#[test]
fn rank_examples() {
    assert_eq!(competition_ranks(&[3.0, 1.0, 2.0]), vec![1, 3, 2]);
    assert_eq!(competition_ranks(&[5.0, 5.0, 1.0]), vec![1, 1, 3]);
}

fn record(policy: &str, budget: usize, best: f64) -> RunRecord {
    let (mut records, _) = collect_experiment(&{
        let mut c = ExperimentConfig::new(vec![quick(PolicyKind::RepeatedSampling)], vec![1], 1);
        c.generators = vec![GeneratorSpec::synthetic("uniform")];
        c
    })
    .unwrap();
    let mut r = records.remove(0);
    r.policy = policy.into();
    r.budget = budget;
    r.best_score = Some(best);
    r.success = None;
    r.pass_at_k.clear();
    r
}

#[test]
fn aggregate_single_record_and_average_rank() {
    let one = aggregate(&[record("a", 1, 0.7)]).unwrap();
    let est = one.rows[0].best_score.unwrap();
    assert_eq!(est.mean, 0.7);
    assert_eq!(est.half_width(), 0.0);

    // Policy p ranks 1st at one budget and 3rd at the other.
    let rs = vec![
        record("p", 1, 0.9),
        record("q", 1, 0.5),
        record("r", 1, 0.1),
        record("p", 2, 0.1),
        record("q", 2, 0.5),
        record("r", 2, 0.9),
    ];
    let s = aggregate(&rs).unwrap();
    assert_eq!(s.ranked_by, "best_score");
    assert_eq!(s.average_rank["p"], 2.0);
    assert_eq!(s.average_rank["q"], 2.0);
    assert!(aggregate(&[]).is_err());
}

#[test]
fn confidence_interval_is_normal_approximation() {
    let rs: Vec<_> = [0.2, 0.4, 0.6, 0.8].iter().map(|v| record("p", 1, *v)).collect();
    let e = aggregate(&rs).unwrap().rows[0].best_score.unwrap();
    let (mean, var) = common::mean_var(&[0.2, 0.4, 0.6, 0.8]);
    assert!((e.mean - mean).abs() < 1e-12);
    let half = 1.959964 * (var / 4.0).sqrt();
    assert!((e.half_width() - half).abs() < 1e-5, "{} vs {half}", e.half_width());
}

#[test]
fn prior_sweep_gives_one_summary_per_value() {
    let mut base = ExperimentConfig::new(vec![quick(PolicyKind::AbmctsAGauss)], vec![4, 8], 2);
    base.generators = vec![GeneratorSpec::synthetic("wide-favored")];
    let grid = SweepGrid {
        field: "m".into(),
        values: vec![0.0, 0.5, 1.0],
    };
    let points = sensitivity_sweep(&base, &grid).unwrap();
    assert_eq!(points.len(), 3);
    assert_eq!(
        points.iter().map(|p| p.value).collect::<Vec<_>>(),
        vec![0.0, 0.5, 1.0]
    );

    let empty = SweepGrid {
        field: "m".into(),
        values: vec![],
    };
    assert!(matches!(sensitivity_sweep(&base, &empty), Err(Error::Config(_))));
    let wrong = SweepGrid {
        field: "alpha".into(),
        values: vec![0.5],
    };
    assert!(matches!(sensitivity_sweep(&base, &wrong), Err(Error::Config(_))));
}

#[test]
fn config_validation() {
    let mut c = small_experiment();
    c.budgets = vec![8, 4];
    assert!(c.validate().is_err());
    let mut c = small_experiment();
    c.seeds = 0;
    assert!(c.validate().is_err());
    let mut c = small_experiment();
    c.policies.push(quick(PolicyKind::RepeatedSampling));
    assert!(c.validate().is_err(), "duplicate names");
    assert!(ExperimentConfig::from_toml("policies = []").is_err());
    assert!(ExperimentConfig::from_toml("[[policies]]\nkind = \"nope\"").is_err());
    assert!(
        ExperimentConfig::from_toml("[[policies]]\nkind = \"std-mcts\"\nwidht = 5").is_err(),
        "unknown keys are rejected"
    );
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(!cfg.policies.is_empty());
            seen += 1;
        }
    }
    assert!(seen >= 3);
    let sweep = ExperimentConfig::load(&dir.join("sweep-m.toml")).unwrap();
    assert_eq!(sweep.sweep.unwrap().values.len(), 3);
    let two = ExperimentConfig::load(&dir.join("budgets-128.toml")).unwrap();
    assert!(two.policies.iter().all(|p| p.generators == 2));
}
