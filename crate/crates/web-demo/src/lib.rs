//! Browser bindings for the search engine. The logic lives in plain Rust
//! types so it runs and is tested natively; the `#[wasm_bindgen]` items at
//! the bottom only translate arguments and errors.

use std::collections::HashMap;
use std::fmt::Write as _;

use abmcts::export::to_dot;
use abmcts::generator::Generator;
use abmcts::metrics::{tree_metrics, TreeMetrics};
use abmcts::policy::{PolicyConfig, PolicyKind, Searcher};
use abmcts::posterior::{thompson_argmax, ConjugatePrior};
use abmcts::synth::{LandscapeParams, SyntheticGenerator};
use abmcts::tree::{NodeId, SearchTree};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const MAX_BUDGET: usize = 256;
pub const MAX_SEEDS: usize = 20;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn demo_policy(name: &str) -> Result<PolicyConfig, String> {
    let mut cfg = PolicyConfig::new(name.parse::<PolicyKind>().map_err(err)?);
    // Shorter chains keep the mixed model interactive in a browser tab.
    cfg.mcmc.warmup = 300;
    cfg.mcmc.keep = 300;
    Ok(cfg)
}

fn landscape(name: &str) -> Result<LandscapeParams, String> {
    LandscapeParams::preset(name).ok_or_else(|| format!("unknown landscape `{name}`"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub policy: String,
    pub answers: usize,
    pub best_score: Option<f64>,
    pub best_latent: Option<f64>,
    pub solved: bool,
    pub failed: usize,
    pub metrics: TreeMetrics,
}

/// One search on a synthetic landscape, advanced a few answers at a time.
pub struct Session {
    searcher: Searcher,
    tree: SearchTree,
    generator: SyntheticGenerator,
    params: LandscapeParams,
    latents: HashMap<NodeId, f64>,
}

impl Session {
    pub fn new(policy: &str, landscape_name: &str, seed: u64) -> Result<Self, String> {
        let params = landscape(landscape_name)?;
        let searcher = Searcher::new(demo_policy(policy)?, seed).map_err(err)?;
        Ok(Session {
            tree: searcher.new_tree(),
            searcher,
            generator: SyntheticGenerator::new(params).map_err(err)?,
            params,
            latents: HashMap::new(),
        })
    }

    /// Add up to `n` answers, stopping at [`MAX_BUDGET`].
    pub fn step(&mut self, n: usize) -> Result<(), String> {
        let n = n.min(MAX_BUDGET.saturating_sub(self.tree.answer_count()));
        for _ in 0..n {
            let target = self.searcher.select_target(&self.tree).map_err(err)?;
            let request = self.searcher.request_for(&self.tree, &target);
            let result = self.generator.generate(&request).map_err(err)?;
            let latent = result.latent;
            let id = self
                .searcher
                .commit_result(&mut self.tree, &target, result)
                .map_err(err)?;
            if let Some(q) = latent {
                self.latents.insert(id, q);
            }
        }
        Ok(())
    }

    pub fn tree(&self) -> &SearchTree {
        &self.tree
    }

    pub fn summary(&self) -> Summary {
        let best = self.tree.select_best().ok();
        let best_latent = best.and_then(|id| self.latents.get(&id).copied());
        Summary {
            policy: self.searcher.config().label(),
            answers: self.tree.answer_count(),
            best_score: best.and_then(|id| self.tree.get(id)).and_then(|n| n.score()),
            best_latent,
            solved: best_latent.is_some_and(|q| self.params.is_success(q)),
            failed: self.tree.answers().filter(|n| n.failed()).count(),
            metrics: tree_metrics(&self.tree),
        }
    }

    pub fn dot(&self) -> String {
        to_dot(&self.tree)
    }

    /// Answer tree as SVG: depth downwards, leaves spread left to right,
    /// nodes coloured from red (score 0) to green (score 1).
    pub fn svg(&self) -> String {
        tree_svg(&self.tree, self.tree.select_best().ok())
    }
}

const DX: f64 = 16.0;
const DY: f64 = 36.0;
const PAD: f64 = 20.0;

fn layout(tree: &SearchTree, id: NodeId, depth: usize, next_leaf: &mut f64, pos: &mut HashMap<NodeId, (f64, f64)>) -> f64 {
    let kids = tree.answer_children(id);
    let x = if kids.is_empty() {
        let x = *next_leaf;
        *next_leaf += 1.0;
        x
    } else {
        let xs: Vec<f64> = kids
            .iter()
            .map(|k| layout(tree, *k, depth + 1, next_leaf, pos))
            .collect();
        (xs[0] + xs[xs.len() - 1]) / 2.0
    };
    pos.insert(id, (PAD + x * DX, PAD + depth as f64 * DY));
    x
}

fn colour(score: Option<f64>) -> String {
    match score {
        Some(s) => format!("hsl({:.0},70%,45%)", 120.0 * s.clamp(0.0, 1.0)),
        None => "#999".into(),
    }
}

pub fn tree_svg(tree: &SearchTree, highlight: Option<NodeId>) -> String {
    let root = tree.root();
    let mut pos = HashMap::new();
    let mut leaves = 0.0;
    layout(tree, root, 0, &mut leaves, &mut pos);
    let max_y = pos.values().map(|p| p.1).fold(0.0, f64::max);
    let (w, h) = (2.0 * PAD + (leaves - 1.0).max(0.0) * DX, max_y + PAD);
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    s.push_str(r##"<g stroke="#bbb" stroke-width="1">"##);
    for node in tree.answers() {
        let parent = tree.answer_parent(node.id()).unwrap_or(root);
        let (a, b) = (pos[&parent], pos[&node.id()]);
        let _ = write!(s, r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}"/>"#, a.0, a.1, b.0, b.1);
    }
    s.push_str("</g>");
    let (rx, ry) = pos[&root];
    let _ = write!(s, r##"<circle cx="{rx:.1}" cy="{ry:.1}" r="6" fill="#222"><title>root</title></circle>"##);
    for (i, node) in tree.answers().enumerate() {
        let (x, y) = pos[&node.id()];
        let ring = if Some(node.id()) == highlight {
            r##" stroke="#06f" stroke-width="3""##
        } else {
            ""
        };
        let label = node
            .score()
            .map_or_else(|| "failed".to_string(), |v| format!("{v:.3}"));
        let _ = write!(
            s,
            r#"<circle cx="{x:.1}" cy="{y:.1}" r="5" fill="{}"{ring}><title>#{} score {label}</title></circle>"#,
            colour(node.score()),
            i + 1
        );
    }
    s.push_str("</svg>");
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmStats {
    pub arm: usize,
    pub observations: usize,
    pub posterior_mean: f64,
    pub chosen: usize,
    pub frequency: f64,
}

/// Parse `"0.2 0.4; 0.9; "` into one score list per arm. An empty arm has
/// no observations and samples from the prior.
pub fn parse_arms(text: &str) -> Result<Vec<Vec<f64>>, String> {
    let arms: Vec<Vec<f64>> = text
        .split([';', '\n'])
        .map(|arm| {
            arm.split([',', ' ', '\t'])
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| format!("`{t}` is not a score")))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    if arms.len() < 2 {
        return Err("give at least two arms separated by `;`".into());
    }
    Ok(arms)
}

/// Repeated Thompson draws over independent conjugate arms, counting how
/// often each arm wins.
pub fn thompson_frequencies(arms: &str, model: &str, draws: usize, seed: u64) -> Result<Vec<ArmStats>, String> {
    let prior = match model {
        "gaussian" => ConjugatePrior::gaussian(),
        "beta" => ConjugatePrior::beta(),
        other => return Err(format!("unknown model `{other}`")),
    };
    let arms = parse_arms(arms)?;
    let posts = arms
        .iter()
        .map(|scores| prior.posterior(scores))
        .collect::<abmcts::Result<Vec<_>>>()
        .map_err(err)?;
    let draws = draws.clamp(1, 1_000_000);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![0usize; arms.len()];
    let mut samples = Vec::with_capacity(arms.len());
    for _ in 0..draws {
        samples.clear();
        samples.extend(posts.iter().enumerate().map(|(i, p)| (i, p.sample(&mut rng))));
        chosen[thompson_argmax(&samples, &mut rng).map_err(err)?] += 1;
    }
    Ok(arms
        .iter()
        .zip(&posts)
        .enumerate()
        .map(|(i, (scores, p))| ArmStats {
            arm: i,
            observations: scores.len(),
            posterior_mean: p.mean(),
            chosen: chosen[i],
            frequency: chosen[i] as f64 / draws as f64,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyRow {
    pub policy: String,
    pub mean_best_latent: f64,
    pub solve_rate: f64,
    pub mean_depth: f64,
    pub mean_width: f64,
}

/// Every policy for `seeds` runs of `budget` answers on one landscape.
pub fn compare_policies(landscape_name: &str, budget: usize, seeds: usize) -> Result<Vec<PolicyRow>, String> {
    let budget = budget.clamp(1, MAX_BUDGET);
    let seeds = seeds.clamp(1, MAX_SEEDS);
    PolicyKind::ALL
        .iter()
        .map(|kind| {
            let (mut latent, mut solved, mut depth, mut width) = (0.0, 0usize, 0.0, 0.0);
            for seed in 0..seeds as u64 {
                let mut s = Session::new(kind.name(), landscape_name, seed)?;
                s.step(budget)?;
                let sum = s.summary();
                latent += sum.best_latent.unwrap_or(0.0);
                solved += usize::from(sum.solved);
                depth += sum.metrics.mean_depth;
                width += sum.metrics.mean_width;
            }
            let n = seeds as f64;
            Ok(PolicyRow {
                policy: kind.name().to_string(),
                mean_best_latent: latent / n,
                solve_rate: solved as f64 / n,
                mean_depth: depth / n,
                mean_width: width / n,
            })
        })
        .collect()
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("demo types serialize")
}

#[wasm_bindgen]
pub struct DemoSearch {
    inner: Session,
}

#[wasm_bindgen]
impl DemoSearch {
    #[wasm_bindgen(constructor)]
    pub fn new(policy: &str, landscape: &str, seed: u32) -> Result<DemoSearch, JsError> {
        Ok(DemoSearch {
            inner: Session::new(policy, landscape, seed.into()).map_err(js)?,
        })
    }

    /// Add `n` answers and return the summary as JSON.
    pub fn step(&mut self, n: u32) -> Result<String, JsError> {
        self.inner.step(n as usize).map_err(js)?;
        Ok(json(&self.inner.summary()))
    }

    pub fn summary(&self) -> String {
        json(&self.inner.summary())
    }

    pub fn svg(&self) -> String {
        self.inner.svg()
    }

    pub fn dot(&self) -> String {
        self.inner.dot()
    }
}

#[wasm_bindgen]
pub fn policy_names() -> String {
    json(&PolicyKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>())
}

#[wasm_bindgen]
pub fn thompson(arms: &str, model: &str, draws: u32, seed: u32) -> Result<String, JsError> {
    thompson_frequencies(arms, model, draws as usize, seed.into())
        .map(|r| json(&r))
        .map_err(js)
}

#[wasm_bindgen]
pub fn compare(landscape: &str, budget: u32, seeds: u32) -> Result<String, JsError> {
    compare_policies(landscape, budget as usize, seeds as usize)
        .map(|r| json(&r))
        .map_err(js)
}
