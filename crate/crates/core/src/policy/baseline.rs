use std::collections::{HashMap, HashSet, VecDeque};

use crate::tree::{NodeId, SearchTree};

use super::PolicyConfig;

/// UCT value of a child with `n_child` visits and mean `mean` under a
/// parent with `n_parent` visits. Unvisited children score +∞.
pub fn uct_score(mean: f64, n_child: usize, n_parent: usize, c: f64) -> f64 {
    if n_child == 0 {
        return f64::INFINITY;
    }
    let ln_parent = (n_parent.max(1) as f64).ln();
    mean + c * (ln_parent / n_child as f64).sqrt()
}

/// UCT argmax over the answer children of `node`, using observation
/// counts as visit counts. Ties go to the earliest child.
pub fn uct_select_child(tree: &SearchTree, node: NodeId, c: f64) -> Option<NodeId> {
    let n_parent = tree.at(node).observations().len();
    let mut best: Option<(NodeId, f64)> = None;
    for child in tree.answer_children(node) {
        let obs = tree.at(child).observed_scores();
        let mean = if obs.is_empty() {
            0.0
        } else {
            obs.iter().sum::<f64>() / obs.len() as f64
        };
        let v = uct_score(mean, obs.len(), n_parent, c);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((child, v));
        }
    }
    best.map(|(id, _)| id)
}

/// Progressive widening: add a child while `children < k · n^α`.
pub fn pw_should_widen(visits: u64, children: usize, k: f64, alpha: f64) -> bool {
    (children as f64) < k * (visits.max(1) as f64).powf(alpha)
}

/// Fixed-width MCTS: each unexpanded leaf reached by UCT gets `width`
/// children, generated one per step before the next descent.
#[derive(Clone, Debug, Default)]
pub(crate) struct StdMctsState {
    pending: VecDeque<NodeId>,
    expanded: HashSet<NodeId>,
}

impl StdMctsState {
    pub(crate) fn select(&mut self, tree: &SearchTree, cfg: &PolicyConfig) -> NodeId {
        if let Some(p) = self.pending.pop_front() {
            return p;
        }
        let mut node = tree.root();
        loop {
            if self.expanded.insert(node) {
                self.pending
                    .extend(std::iter::repeat_n(node, cfg.width - 1));
                return node;
            }
            match uct_select_child(tree, node, cfg.uct_c) {
                Some(c) => node = c,
                // Expanded earlier but its children are still in flight
                // (batched proposals): widen it again.
                None => return node,
            }
        }
    }
}

/// Progressive widening with visit counts kept here; a descent through a
/// node counts as a visit before the widening test.
#[derive(Clone, Debug, Default)]
pub(crate) struct PwState {
    visits: HashMap<NodeId, u64>,
}

impl PwState {
    pub(crate) fn select(&mut self, tree: &SearchTree, cfg: &PolicyConfig) -> NodeId {
        let mut node = tree.root();
        loop {
            let n = self.visits.entry(node).or_insert(0);
            *n += 1;
            let children = tree.answer_children(node).len();
            if pw_should_widen(*n, children, cfg.pw_k, cfg.pw_alpha) {
                return node;
            }
            match uct_select_child(tree, node, cfg.uct_c) {
                Some(c) => node = c,
                None => return node,
            }
        }
    }

    pub(crate) fn visits(&self, node: NodeId) -> u64 {
        self.visits.get(&node).copied().unwrap_or(0)
    }
}
