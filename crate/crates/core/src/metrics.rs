//! Tree-shape metrics over answer nodes and the root. GEN and CONT nodes
//! are invisible here, so trees from different policies compare directly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tree::SearchTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeMetrics {
    pub n_answer_nodes: usize,
    pub max_depth: usize,
    /// Mean depth of answer nodes (root excluded).
    pub mean_depth: f64,
    /// Mean number of nodes per occupied depth, root level included.
    pub mean_width: f64,
    /// `ln(mean_depth / mean_width)`; absent for a tree without answers.
    pub depth_width_log_ratio: Option<f64>,
    /// Out-degree (answer children) to number of root/answer nodes with it.
    pub degree_histogram: BTreeMap<usize, usize>,
}

pub fn tree_metrics(tree: &SearchTree) -> TreeMetrics {
    let mut depth = vec![0usize; tree.len()];
    let mut per_level: Vec<usize> = vec![1];
    let mut depth_sum = 0usize;
    let mut n_answers = 0usize;
    let mut histogram = BTreeMap::new();
    let root = tree.root();
    *histogram
        .entry(tree.answer_children(root).len())
        .or_insert(0) += 1;

    // Arena order is creation order, so a parent's depth is always known.
    for node in tree.answers() {
        let parent = tree.answer_parent(node.id()).unwrap_or(root);
        let d = depth[parent.index()] + 1;
        depth[node.id().index()] = d;
        if per_level.len() <= d {
            per_level.resize(d + 1, 0);
        }
        per_level[d] += 1;
        depth_sum += d;
        n_answers += 1;
        *histogram
            .entry(tree.answer_children(node.id()).len())
            .or_insert(0) += 1;
    }

    let mean_depth = if n_answers == 0 {
        0.0
    } else {
        depth_sum as f64 / n_answers as f64
    };
    let occupied = per_level.iter().filter(|c| **c > 0).count();
    let mean_width = (n_answers + 1) as f64 / occupied as f64;
    TreeMetrics {
        n_answer_nodes: n_answers,
        max_depth: per_level.len() - 1,
        mean_depth,
        mean_width,
        depth_width_log_ratio: (n_answers > 0).then(|| (mean_depth / mean_width).ln()),
        degree_histogram: histogram,
    }
}
