//! Choosing among several generators.
//!
//! Two schemes are supported. With [`GeneratorSelection::Posterior`] the
//! base policy first picks the node to expand, then each generator gets a
//! posterior over the scores of every answer it has produced and the
//! highest Thompson sample wins. With [`GeneratorSelection::GenNodes`]
//! every answer node carries one GEN node per generator and selection runs
//! per generator before comparing the winners (see `policy`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mixed_model::{predict_with, GroupedObservations, PredictiveTarget};
use crate::policy::{MixedFitCache, PolicyConfig, PolicyKind};
use crate::posterior::{thompson_argmax, ConjugatePrior};
use crate::tree::{FailurePolicy, GeneratorId, NodeId, SearchTree};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorSelection {
    /// Node first, then a generator from per-generator score posteriors.
    #[default]
    Posterior,
    /// One GEN node per generator at every answer node.
    GenNodes,
}

/// Scores of the answers produced by each generator.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeneratorStats {
    pub scores: Vec<Vec<f64>>,
}

impl GeneratorStats {
    pub fn new(scores: Vec<Vec<f64>>) -> Self {
        GeneratorStats { scores }
    }

    /// Collect per-generator scores from a tree. Failed answers count only
    /// when the failure policy substitutes a score.
    pub fn from_tree(tree: &SearchTree, generators: usize, failure: FailurePolicy) -> Self {
        let mut scores = vec![Vec::new(); generators];
        for n in tree.answers() {
            let g = n.generator().unwrap_or(GeneratorId(0)).index();
            let s = match (n.score(), failure) {
                (Some(s), _) => Some(s),
                (None, FailurePolicy::Substitute(v)) => Some(v),
                (None, FailurePolicy::Skip) => None,
            };
            if let (Some(s), Some(list)) = (s, scores.get_mut(g)) {
                list.push(s);
            }
        }
        GeneratorStats { scores }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Independent conjugate posterior per generator; highest sample wins.
/// A single generator is returned without drawing.
pub fn select_generator_alg1<R: Rng + ?Sized>(
    stats: &GeneratorStats,
    prior: &ConjugatePrior,
    rng: &mut R,
) -> Result<GeneratorId> {
    if stats.len() == 1 {
        return Ok(GeneratorId(0));
    }
    let mut samples = Vec::with_capacity(stats.len());
    for (l, s) in stats.scores.iter().enumerate() {
        samples.push((GeneratorId(l as u32), prior.posterior(s)?.sample(rng)));
    }
    thompson_argmax(&samples, rng)
}

/// Mixed model with generators as groups; one joint posterior draw, one
/// predictive sample per generator.
pub fn select_generator_mixed<R: Rng + ?Sized>(
    stats: &GeneratorStats,
    fits: &mut MixedFitCache,
    rng: &mut R,
) -> Result<GeneratorId> {
    if stats.len() == 1 {
        return Ok(GeneratorId(0));
    }
    let obs = GroupedObservations::new(stats.scores.clone());
    let draw = fits.joint_draw(crate::policy::GENERATOR_GROUPS, &obs, rng)?;
    let samples: Vec<(GeneratorId, f64)> = (0..stats.len())
        .map(|l| {
            (
                GeneratorId(l as u32),
                predict_with(&draw, PredictiveTarget::Group(l), rng),
            )
        })
        .collect();
    thompson_argmax(&samples, rng)
}

pub(crate) fn select_generator_posterior<R: Rng + ?Sized>(
    tree: &SearchTree,
    cfg: &PolicyConfig,
    fits: &mut MixedFitCache,
    rng: &mut R,
) -> Result<GeneratorId> {
    let stats = GeneratorStats::from_tree(tree, cfg.generators, cfg.failure_policy());
    match cfg.kind {
        PolicyKind::AbmctsM => select_generator_mixed(&stats, fits, rng),
        _ => select_generator_alg1(&stats, &cfg.conjugate_prior(), rng),
    }
}

/// Fraction of answer nodes produced by each generator. Sums to 1 for a
/// tree with at least one answer.
pub fn usage_fractions(tree: &SearchTree, generators: usize) -> Vec<f64> {
    let mut counts = vec![0usize; generators];
    for n in tree.answers() {
        if let Some(c) = counts.get_mut(n.generator().unwrap_or(GeneratorId(0)).index()) {
            *c += 1;
        }
    }
    let total = counts.iter().sum::<usize>();
    counts
        .into_iter()
        .map(|c| {
            if total == 0 {
                0.0
            } else {
                c as f64 / total as f64
            }
        })
        .collect()
}

/// The `k` best answers by score, later answers first among equal scores.
pub fn top_k(tree: &SearchTree, k: usize) -> Vec<NodeId> {
    let mut ranked = tree.ranked_answers();
    ranked.truncate(k);
    ranked
}
