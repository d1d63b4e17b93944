use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::records::RunRecord;

/// Sample mean with a normal-approximation 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let half = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        };
        Some(Estimate {
            n,
            mean,
            ci_low: mean - half,
            ci_high: mean + half,
        })
    }

    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub budget: usize,
    pub runs: usize,
    pub success_rate: Option<Estimate>,
    pub pass_at_k: BTreeMap<usize, Estimate>,
    pub best_score: Option<Estimate>,
    pub best_latent: Option<Estimate>,
    pub mean_depth: Estimate,
    pub mean_width: Estimate,
    pub depth_width_log_ratio: Option<Estimate>,
    /// Rank among policies at this budget; 1 is best.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    /// Mean rank of each policy across budgets.
    pub average_rank: BTreeMap<String, f64>,
    /// What the ranks are computed from.
    pub ranked_by: String,
}

/// Competition ranks, higher value ranks first, ties share the better
/// rank: `[3, 1, 2]` gives `[1, 3, 2]` and `[5, 5, 1]` gives `[1, 1, 3]`.
pub fn competition_ranks(values: &[f64]) -> Vec<usize> {
    values
        .iter()
        .map(|v| 1 + values.iter().filter(|w| *w > v).count())
        .collect()
}

/// Means, intervals and ranks per policy and budget.
pub fn aggregate(records: &[RunRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::Config("no records to aggregate".into()));
    }
    let mut groups: BTreeMap<(usize, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.budget, r.policy.clone()))
            .or_default()
            .push(r);
    }
    let by_success = records.iter().all(|r| r.success.is_some());

    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((budget, policy), rs)| {
            let collect = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Vec<f64> {
                rs.iter().filter_map(|r| f(r)).collect()
            };
            let flag = |b: bool| if b { 1.0 } else { 0.0 };
            let ks: Vec<usize> = rs
                .iter()
                .flat_map(|r| r.pass_at_k.keys().copied())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let pass_at_k = ks
                .into_iter()
                .filter_map(|k| {
                    let v = collect(&|r| r.pass_at_k.get(&k).map(|b| flag(*b)));
                    Estimate::from_values(&v).map(|e| (k, e))
                })
                .collect();
            SummaryRow {
                runs: rs.len(),
                success_rate: Estimate::from_values(&collect(&|r| r.success.map(flag))),
                pass_at_k,
                best_score: Estimate::from_values(&collect(&|r| r.best_score)),
                best_latent: Estimate::from_values(&collect(&|r| r.best_latent)),
                mean_depth: Estimate::from_values(&collect(&|r| Some(r.metrics.mean_depth)))
                    .expect("group is non-empty"),
                mean_width: Estimate::from_values(&collect(&|r| Some(r.metrics.mean_width)))
                    .expect("group is non-empty"),
                depth_width_log_ratio: Estimate::from_values(&collect(&|r| {
                    r.metrics.depth_width_log_ratio
                })),
                rank: 0,
                policy,
                budget,
            }
        })
        .collect();

    let rank_value = |row: &SummaryRow| {
        let e = if by_success {
            row.success_rate
        } else {
            row.best_score
        };
        e.map_or(f64::NEG_INFINITY, |e| e.mean)
    };
    let mut rank_sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut start = 0;
    while start < rows.len() {
        let budget = rows[start].budget;
        let end = start
            + rows[start..]
                .iter()
                .take_while(|r| r.budget == budget)
                .count();
        let values: Vec<f64> = rows[start..end].iter().map(rank_value).collect();
        for (row, rank) in rows[start..end].iter_mut().zip(competition_ranks(&values)) {
            row.rank = rank;
            let e = rank_sums.entry(row.policy.clone()).or_insert((0.0, 0));
            e.0 += rank as f64;
            e.1 += 1;
        }
        start = end;
    }
    Ok(Summary {
        rows,
        average_rank: rank_sums
            .into_iter()
            .map(|(p, (s, n))| (p, s / n as f64))
            .collect(),
        ranked_by: if by_success {
            "success_rate"
        } else {
            "best_score"
        }
        .into(),
    })
}

fn fmt_est(e: Option<Estimate>) -> String {
    match e {
        Some(e) => format!("{:.3} ± {:.3}", e.mean, e.half_width()),
        None => "-".into(),
    }
}

/// Plain-text table of a summary.
pub fn format_summary(summary: &Summary) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<24} {:>6} {:>5} {:>15} {:>15} {:>15} {:>8} {:>8} {:>4}",
        "policy",
        "budget",
        "runs",
        "success",
        "best score",
        "best latent",
        "depth",
        "width",
        "rank"
    );
    for r in &summary.rows {
        let _ = writeln!(
            s,
            "{:<24} {:>6} {:>5} {:>15} {:>15} {:>15} {:>8.2} {:>8.2} {:>4}",
            r.policy,
            r.budget,
            r.runs,
            fmt_est(r.success_rate),
            fmt_est(r.best_score),
            fmt_est(r.best_latent),
            r.mean_depth.mean,
            r.mean_width.mean,
            r.rank
        );
    }
    let _ = writeln!(s, "\naverage rank (by {}):", summary.ranked_by);
    for (p, rank) in &summary.average_rank {
        let _ = writeln!(s, "  {p:<24} {rank:.2}");
    }
    s
}
