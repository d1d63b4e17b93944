use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mixed_model::{
    fit, predict_with, Draw, GroupedObservations, McmcConfig, MixedModelFit, MixedModelPriors,
    PredictiveTarget,
};
use crate::posterior::{thompson_argmax, ConjugatePrior};
use crate::seed::derive_seed;
use crate::tree::{GeneratorId, NodeId, SearchTree, TreeShape};

use super::PolicyConfig;

/// One selection decision at a root/answer node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Choice {
    /// Fire this generator's GEN action: expand the current node.
    Gen(GeneratorId),
    /// Move down to this answer child.
    Child(NodeId),
}

/// Walk down from the root, asking `choose` at every root/answer node,
/// until some GEN action fires. Returns the node to expand and the
/// generator slot of the GEN action.
pub fn descend(
    tree: &SearchTree,
    mut choose: impl FnMut(NodeId) -> Result<Choice>,
) -> Result<(NodeId, GeneratorId)> {
    let mut node = tree.root();
    loop {
        match choose(node)? {
            Choice::Gen(g) => return Ok((node, g)),
            Choice::Child(c) => {
                if tree.answer_parent(c) != Some(node) {
                    return Err(Error::Invariant(format!(
                        "{c} is not an answer child of {node}"
                    )));
                }
                node = c;
            }
        }
    }
}

/// Mixed-model fits per node and GEN slot, refitted only when the
/// grouped data changed. Observation lists only grow, so the per-group
/// counts identify the data exactly.
#[derive(Clone, Debug)]
pub struct MixedFitCache {
    priors: MixedModelPriors,
    mcmc: McmcConfig,
    seed: u64,
    fits: HashMap<(u64, u64), (Vec<usize>, Arc<MixedModelFit>)>,
    misses: usize,
}

/// Cache key for the generator-level model.
pub(crate) const GENERATOR_GROUPS: (u64, u64) = (u64::MAX, 0);

impl MixedFitCache {
    pub fn new(priors: MixedModelPriors, mcmc: McmcConfig, seed: u64) -> Self {
        MixedFitCache {
            priors,
            mcmc,
            seed,
            fits: HashMap::new(),
            misses: 0,
        }
    }

    pub fn priors(&self) -> &MixedModelPriors {
        &self.priors
    }

    pub fn misses(&self) -> usize {
        self.misses
    }

    pub(crate) fn fit_for(
        &mut self,
        key: (u64, u64),
        obs: &GroupedObservations,
    ) -> Result<Arc<MixedModelFit>> {
        let counts: Vec<usize> = obs.groups().iter().map(Vec::len).collect();
        if let Some((c, f)) = self.fits.get(&key) {
            if *c == counts {
                return Ok(f.clone());
            }
        }
        let cfg = McmcConfig {
            seed: derive_seed(self.seed, &[key.0, key.1, obs.total() as u64]),
            ..self.mcmc.clone()
        };
        let f = Arc::new(fit(obs, &self.priors, &cfg)?);
        self.misses += 1;
        self.fits.insert(key, (counts, f.clone()));
        Ok(f)
    }

    /// One joint parameter draw for a Thompson decision: from the fitted
    /// posterior, or from the prior when no group has data.
    pub(crate) fn joint_draw<R: Rng + ?Sized>(
        &mut self,
        key: (u64, u64),
        obs: &GroupedObservations,
        rng: &mut R,
    ) -> Result<Draw> {
        if obs.total() == 0 {
            let prior = MixedModelFit::from_prior(&self.priors, obs.len(), 1, rng);
            return Ok(prior.draws()[0].clone());
        }
        let f = self.fit_for(key, obs)?;
        Ok(f.pick(rng).clone())
    }
}

fn argmax_with_value<R: Rng + ?Sized>(
    actions: Vec<(Choice, f64)>,
    rng: &mut R,
) -> Result<(Choice, f64)> {
    let indexed: Vec<(usize, f64)> = actions.iter().enumerate().map(|(i, a)| (i, a.1)).collect();
    let i = thompson_argmax(&indexed, rng)?;
    Ok(actions[i])
}

fn children_of(tree: &SearchTree, node: NodeId, only: Option<GeneratorId>) -> Vec<NodeId> {
    let mut children = tree.answer_children(node);
    if let Some(g) = only {
        children.retain(|c| tree.at(*c).generator() == Some(g));
    }
    children
}

/// The answer child of `node` on the path down to `source`.
fn top_child(tree: &SearchTree, node: NodeId, source: NodeId) -> Option<NodeId> {
    let mut cur = source;
    loop {
        let p = tree.answer_parent(cur)?;
        if p == node {
            return Some(cur);
        }
        cur = p;
    }
}

/// Mixed-model Thompson step within one generator's view of `node`:
/// its GEN slot plus the children it created (all children if `only` is
/// `None`). Returns the winning action and its sampled score.
fn m_sub_select<R: Rng + ?Sized>(
    tree: &SearchTree,
    node: NodeId,
    slot: usize,
    only: Option<GeneratorId>,
    fits: &mut MixedFitCache,
    rng: &mut R,
) -> Result<(Choice, f64)> {
    let children = children_of(tree, node, only);
    let obs = GroupedObservations::new(
        children
            .iter()
            .map(|c| tree.at(*c).observed_scores())
            .collect(),
    );
    let draw = fits.joint_draw((node.index() as u64, slot as u64), &obs, rng)?;
    let mut actions = vec![(
        Choice::Gen(GeneratorId(slot as u32)),
        predict_with(&draw, PredictiveTarget::Gen, rng),
    )];
    for (j, c) in children.iter().enumerate() {
        actions.push((
            Choice::Child(*c),
            predict_with(&draw, PredictiveTarget::Group(j), rng),
        ));
    }
    argmax_with_value(actions, rng)
}

/// Two-stage conjugate Thompson step: GEN against CONT, then among the
/// children under CONT.
fn a_sub_select<R: Rng + ?Sized>(
    tree: &SearchTree,
    node: NodeId,
    slot: usize,
    only: Option<GeneratorId>,
    prior: &ConjugatePrior,
    rng: &mut R,
) -> Result<(Choice, f64)> {
    let gen = tree
        .gen_child(node, slot)
        .ok_or_else(|| Error::Invariant(format!("{node} lacks GEN slot {slot}")))?;
    let gen_choice = Choice::Gen(GeneratorId(slot as u32));
    let s_gen = prior
        .posterior(&tree.at(gen).observed_scores())?
        .sample(rng);
    let children = children_of(tree, node, only);
    if children.is_empty() {
        return Ok((gen_choice, s_gen));
    }
    let cont = tree
        .cont_child(node)
        .ok_or_else(|| Error::Invariant(format!("{node} lacks a CONT child")))?;
    let cont_obs: Vec<f64> = match only {
        None => tree.at(cont).observed_scores(),
        Some(g) => tree
            .at(cont)
            .observations()
            .iter()
            .filter(|o| {
                top_child(tree, node, o.source).and_then(|c| tree.at(c).generator()) == Some(g)
            })
            .map(|o| o.score)
            .collect(),
    };
    let s_cont = prior.posterior(&cont_obs)?.sample(rng);
    if thompson_argmax(&[(0u8, s_gen), (1u8, s_cont)], rng)? == 0 {
        return Ok((gen_choice, s_gen));
    }
    let mut actions = Vec::with_capacity(children.len());
    for c in children {
        let s = prior.posterior(&tree.at(c).observed_scores())?.sample(rng);
        actions.push((Choice::Child(c), s));
    }
    argmax_with_value(actions, rng)
}

/// AB-MCTS-M child selection at `node` for a single-generator tree.
pub fn abmcts_m_select_child<R: Rng + ?Sized>(
    tree: &SearchTree,
    node: NodeId,
    fits: &mut MixedFitCache,
    rng: &mut R,
) -> Result<Choice> {
    expect(tree, TreeShape::Mixed)?;
    if tree.answer_children(node).is_empty() {
        return Ok(Choice::Gen(GeneratorId(0)));
    }
    Ok(m_sub_select(tree, node, 0, None, fits, rng)?.0)
}

/// AB-MCTS-A child selection at `node` for a single-generator tree.
pub fn abmcts_a_select_child<R: Rng + ?Sized>(
    tree: &SearchTree,
    node: NodeId,
    prior: &ConjugatePrior,
    rng: &mut R,
) -> Result<Choice> {
    expect(tree, TreeShape::Aggregated)?;
    if tree.answer_children(node).is_empty() {
        return Ok(Choice::Gen(GeneratorId(0)));
    }
    Ok(a_sub_select(tree, node, 0, None, prior, rng)?.0)
}

fn expect(tree: &SearchTree, shape: TreeShape) -> Result<()> {
    if tree.shape() != shape {
        return Err(Error::WrongShape {
            expected: shape,
            found: tree.shape(),
        });
    }
    Ok(())
}

/// The policy's decision at one node. With several GEN slots, every
/// generator runs its own sub-selection and the sampled scores of the
/// per-generator winners are compared.
pub(crate) fn choose_at(
    tree: &SearchTree,
    node: NodeId,
    cfg: &PolicyConfig,
    fits: &mut MixedFitCache,
    rng: &mut ChaCha8Rng,
) -> Result<Choice> {
    let prior = cfg.conjugate_prior();
    let slots = tree.gen_slots();
    if slots == 1 {
        return match tree.shape() {
            TreeShape::Mixed => abmcts_m_select_child(tree, node, fits, rng),
            _ => abmcts_a_select_child(tree, node, &prior, rng),
        };
    }
    let shared = cfg.shared_subselection_draws.then(|| rng.next_u64());
    let mut winners = Vec::with_capacity(slots);
    for slot in 0..slots {
        let only = Some(GeneratorId(slot as u32));
        let mut local;
        let r: &mut ChaCha8Rng = match shared {
            Some(seed) => {
                local = ChaCha8Rng::seed_from_u64(seed);
                &mut local
            }
            None => rng,
        };
        winners.push(match tree.shape() {
            TreeShape::Mixed => m_sub_select(tree, node, slot, only, fits, r)?,
            _ => a_sub_select(tree, node, slot, only, &prior, r)?,
        });
    }
    Ok(argmax_with_value(winners, rng)?.0)
}
