//! Search policies behind one select / expand / backup loop.
//!
//! A [`Searcher`] owns the selection rng and whatever per-policy state a
//! policy needs (visit counters, pending expansions, cached mixed-model
//! fits). The tree itself is passed in by reference so callers keep full
//! control of it between steps.

mod abmcts;
mod baseline;

use std::collections::HashMap;
use std::f64::consts::SQRT_2;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{
    FailureKind, GenerationRequest, GenerationResult, Generator, LineageRecord,
};
use crate::mixed_model::{McmcConfig, MixedModelPriors};
use crate::multigen::{self, GeneratorSelection};
use crate::posterior::{BetaPosterior, ConjugatePrior, GaussianPosterior, ShrinkageTerm};
use crate::seed::{derive_seed, derived_rng, label};
use crate::tree::{FailurePolicy, GeneratorId, NewAnswer, NodeId, SearchTree, TreeShape};

pub(crate) use abmcts::GENERATOR_GROUPS;
pub use abmcts::{abmcts_a_select_child, abmcts_m_select_child, descend, Choice, MixedFitCache};
pub use baseline::{pw_should_widen, uct_score, uct_select_child};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    AbmctsM,
    AbmctsAGauss,
    AbmctsABeta,
    StdMcts,
    ProgressiveWidening,
    RepeatedSampling,
    SequentialRefinement,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::AbmctsM,
        PolicyKind::AbmctsAGauss,
        PolicyKind::AbmctsABeta,
        PolicyKind::StdMcts,
        PolicyKind::ProgressiveWidening,
        PolicyKind::RepeatedSampling,
        PolicyKind::SequentialRefinement,
    ];

    pub fn shape(self) -> TreeShape {
        match self {
            PolicyKind::AbmctsM => TreeShape::Mixed,
            PolicyKind::AbmctsAGauss | PolicyKind::AbmctsABeta => TreeShape::Aggregated,
            _ => TreeShape::Plain,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::AbmctsM => "abmcts-m",
            PolicyKind::AbmctsAGauss => "abmcts-a-gauss",
            PolicyKind::AbmctsABeta => "abmcts-a-beta",
            PolicyKind::StdMcts => "std-mcts",
            PolicyKind::ProgressiveWidening => "progressive-widening",
            PolicyKind::RepeatedSampling => "repeated-sampling",
            PolicyKind::SequentialRefinement => "sequential-refinement",
        }
    }

    pub fn is_abmcts(self) -> bool {
        self.shape() != TreeShape::Plain
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}`")))
    }
}

fn default_width() -> usize {
    5
}
fn default_pw_k() -> f64 {
    1.0
}
fn default_pw_alpha() -> f64 {
    0.45
}
fn default_uct_c() -> f64 {
    SQRT_2
}
fn default_generators() -> usize {
    1
}

/// Everything a policy needs. Fields irrelevant to `kind` are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Display name in records; defaults to the kind's name.
    #[serde(default)]
    pub name: Option<String>,
    /// Children added per expansion by standard MCTS.
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_pw_k")]
    pub pw_k: f64,
    #[serde(default = "default_pw_alpha")]
    pub pw_alpha: f64,
    #[serde(default = "default_uct_c")]
    pub uct_c: f64,
    #[serde(default)]
    pub mixed_priors: MixedModelPriors,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub gaussian_prior: GaussianPosterior,
    /// Use the posterior mean in the Gaussian scale update, as printed in
    /// some derivations, instead of the conjugate prior-mean form.
    #[serde(default)]
    pub paper_literal_update: bool,
    #[serde(default)]
    pub beta_prior: BetaPosterior,
    /// Score backed up for failed generations. `None` skips them.
    #[serde(default)]
    pub failed_score: Option<f64>,
    /// Keep only the nearest `max_lineage` ancestors in refine requests.
    #[serde(default)]
    pub max_lineage: Option<usize>,
    /// Number of generators L.
    #[serde(default = "default_generators")]
    pub generators: usize,
    #[serde(default)]
    pub generator_selection: GeneratorSelection,
    /// Let the per-generator sub-selections of the GEN-node algorithm
    /// share one random stream per node instead of drawing independently.
    #[serde(default)]
    pub shared_subselection_draws: bool,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        PolicyConfig {
            kind,
            name: None,
            width: default_width(),
            pw_k: default_pw_k(),
            pw_alpha: default_pw_alpha(),
            uct_c: default_uct_c(),
            mixed_priors: MixedModelPriors::default(),
            mcmc: McmcConfig::default(),
            gaussian_prior: GaussianPosterior::default(),
            paper_literal_update: false,
            beta_prior: BetaPosterior::default(),
            failed_score: None,
            max_lineage: None,
            generators: 1,
            generator_selection: GeneratorSelection::default(),
            shared_subselection_draws: false,
        }
    }

    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.kind.name().to_string())
    }

    pub fn with_generators(mut self, n: usize, selection: GeneratorSelection) -> Self {
        self.generators = n;
        self.generator_selection = selection;
        self
    }

    pub fn with_pw(mut self, k: f64, alpha: f64) -> Self {
        self.pw_k = k;
        self.pw_alpha = alpha;
        self
    }

    pub fn failure_policy(&self) -> FailurePolicy {
        match self.failed_score {
            Some(v) => FailurePolicy::Substitute(v),
            None => FailurePolicy::Skip,
        }
    }

    pub fn shrinkage(&self) -> ShrinkageTerm {
        if self.paper_literal_update {
            ShrinkageTerm::PosteriorMean
        } else {
            ShrinkageTerm::PriorMean
        }
    }

    /// Conjugate model used by AB-MCTS-A and by posterior-based generator
    /// selection. Policies without a Beta model fall back to Gaussian.
    pub fn conjugate_prior(&self) -> ConjugatePrior {
        match self.kind {
            PolicyKind::AbmctsABeta => ConjugatePrior::Beta {
                prior: self.beta_prior,
            },
            _ => ConjugatePrior::Gaussian {
                prior: self.gaussian_prior,
                shrinkage: self.shrinkage(),
            },
        }
    }

    pub fn gen_slots(&self) -> usize {
        match self.generator_selection {
            GeneratorSelection::GenNodes => self.generators,
            GeneratorSelection::Posterior => 1,
        }
    }

    pub fn new_tree(&self) -> SearchTree {
        SearchTree::with_gen_slots(self.kind.shape(), self.gen_slots())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 {
            return bad("width must be at least 1".into());
        }
        if !(self.pw_k > 0.0) || !(self.pw_alpha > 0.0 && self.pw_alpha < 1.0) {
            return bad("progressive widening needs pw_k > 0 and pw_alpha in (0, 1)".into());
        }
        if !(self.uct_c > 0.0) {
            return bad("uct_c must be positive".into());
        }
        if self.generators == 0 {
            return bad("at least one generator is required".into());
        }
        if self.generator_selection == GeneratorSelection::GenNodes
            && self.generators > 1
            && !self.kind.is_abmcts()
        {
            return bad(format!("{} cannot use per-generator GEN nodes", self.kind));
        }
        if let Some(v) = self.failed_score {
            if !v.is_finite() {
                return bad("failed_score must be finite".into());
            }
            if self.kind == PolicyKind::AbmctsABeta && !(0.0..=1.0).contains(&v) {
                return bad("failed_score must lie in [0, 1] for the Beta model".into());
            }
        }
        if self.max_lineage == Some(0) {
            return bad("max_lineage must be at least 1".into());
        }
        self.mixed_priors.validate()?;
        self.mcmc.validate()?;
        self.gaussian_prior.validate()?;
        self.beta_prior.validate()?;
        Ok(())
    }

    /// Prior hyperparameters this policy actually reads.
    pub fn prior_fields(&self) -> &'static [&'static str] {
        match self.kind {
            PolicyKind::AbmctsM => &[
                "mu_alpha_mean",
                "mu_alpha_sd",
                "sigma_alpha_scale",
                "sigma_y_scale",
            ],
            PolicyKind::AbmctsAGauss => &["m", "kappa", "nu", "tau2"],
            PolicyKind::AbmctsABeta => &["alpha", "beta"],
            _ => &[],
        }
    }

    /// Set one prior hyperparameter by name. Fails when the policy does not
    /// use that field.
    pub fn set_prior(&mut self, field: &str, value: f64) -> Result<()> {
        if !self.prior_fields().contains(&field) {
            return Err(Error::Config(format!(
                "{} has no prior field `{field}`",
                self.kind
            )));
        }
        let slot = match field {
            "mu_alpha_mean" => &mut self.mixed_priors.mu_alpha_mean,
            "mu_alpha_sd" => &mut self.mixed_priors.mu_alpha_sd,
            "sigma_alpha_scale" => &mut self.mixed_priors.sigma_alpha_scale,
            "sigma_y_scale" => &mut self.mixed_priors.sigma_y_scale,
            "m" => &mut self.gaussian_prior.m,
            "kappa" => &mut self.gaussian_prior.kappa,
            "nu" => &mut self.gaussian_prior.nu,
            "tau2" => &mut self.gaussian_prior.tau2,
            "alpha" => &mut self.beta_prior.alpha,
            "beta" => &mut self.beta_prior.beta,
            _ => unreachable!("field list and match agree"),
        };
        *slot = value;
        self.validate()
    }
}

/// Where the next answer goes and who writes it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpansionTarget {
    /// Root or answer node whose GEN action fired.
    pub parent: NodeId,
    pub generator: GeneratorId,
    /// Answer ancestors handed to the generator, top-down, ending at
    /// `parent` (empty when `parent` is the root).
    pub lineage: Vec<NodeId>,
}

#[derive(Clone, Debug, Default)]
pub(crate) enum BaselineState {
    #[default]
    None,
    Std(baseline::StdMctsState),
    Pw(baseline::PwState),
}

/// Policy state for one search run.
pub struct Searcher {
    cfg: PolicyConfig,
    seed: u64,
    rng: ChaCha8Rng,
    calls: u64,
    task: String,
    baseline: BaselineState,
    fits: MixedFitCache,
}

impl Searcher {
    pub fn new(cfg: PolicyConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let baseline = match cfg.kind {
            PolicyKind::StdMcts => BaselineState::Std(Default::default()),
            PolicyKind::ProgressiveWidening => BaselineState::Pw(Default::default()),
            _ => BaselineState::None,
        };
        let fits = MixedFitCache::new(
            cfg.mixed_priors,
            cfg.mcmc.clone(),
            derive_seed(seed, &[label::MIXED_FIT]),
        );
        Ok(Searcher {
            rng: derived_rng(seed, &[label::SELECTION]),
            cfg,
            seed,
            calls: 0,
            task: "task".into(),
            baseline,
            fits,
        })
    }

    pub fn with_task(mut self, task: impl Into<String>) -> Self {
        self.task = task.into();
        self
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn new_tree(&self) -> SearchTree {
        self.cfg.new_tree()
    }

    /// Visits recorded at `node` by progressive widening (0 for other
    /// policies).
    pub fn pw_visits(&self, node: NodeId) -> u64 {
        match &self.baseline {
            BaselineState::Pw(s) => s.visits(node),
            _ => 0,
        }
    }

    /// Number of mixed-model fits computed so far (cache misses).
    pub fn fits_computed(&self) -> usize {
        self.fits.misses()
    }

    fn check_tree(&self, tree: &SearchTree) -> Result<()> {
        let shape = self.cfg.kind.shape();
        if tree.shape() != shape {
            return Err(Error::WrongShape {
                expected: shape,
                found: tree.shape(),
            });
        }
        if tree.gen_slots() != self.cfg.gen_slots() && shape != TreeShape::Plain {
            return Err(Error::Config(format!(
                "tree has {} GEN slots, policy expects {}",
                tree.gen_slots(),
                self.cfg.gen_slots()
            )));
        }
        Ok(())
    }

    /// Descend from the root and pick the next node to expand.
    pub fn select_target(&mut self, tree: &SearchTree) -> Result<ExpansionTarget> {
        self.check_tree(tree)?;
        let (parent, slot_generator) = match self.cfg.kind {
            PolicyKind::RepeatedSampling => (tree.root(), None),
            PolicyKind::SequentialRefinement => {
                (tree.answers().last().map_or(tree.root(), |n| n.id()), None)
            }
            PolicyKind::StdMcts | PolicyKind::ProgressiveWidening => {
                let parent = match &mut self.baseline {
                    BaselineState::Std(s) => s.select(tree, &self.cfg),
                    BaselineState::Pw(s) => s.select(tree, &self.cfg),
                    BaselineState::None => unreachable!("baseline state set in new"),
                };
                (parent, None)
            }
            PolicyKind::AbmctsM | PolicyKind::AbmctsAGauss | PolicyKind::AbmctsABeta => {
                let cfg = &self.cfg;
                let rng = &mut self.rng;
                let fits = &mut self.fits;
                let (parent, g) =
                    descend(tree, |node| abmcts::choose_at(tree, node, cfg, fits, rng))?;
                (parent, Some(g))
            }
        };
        let generator = match slot_generator {
            Some(g) if self.cfg.gen_slots() > 1 => g,
            _ => self.pick_generator(tree)?,
        };
        Ok(ExpansionTarget {
            parent,
            generator,
            lineage: self.lineage_for(tree, parent),
        })
    }

    fn pick_generator(&mut self, tree: &SearchTree) -> Result<GeneratorId> {
        if self.cfg.generators == 1 {
            return Ok(GeneratorId(0));
        }
        multigen::select_generator_posterior(tree, &self.cfg, &mut self.fits, &mut self.rng)
    }

    fn lineage_for(&self, tree: &SearchTree, parent: NodeId) -> Vec<NodeId> {
        let mut chain = tree.lineage(parent);
        if let Some(cap) = self.cfg.max_lineage {
            if chain.len() > cap {
                chain.drain(..chain.len() - cap);
            }
        }
        chain
    }

    /// `b` targets chosen without intermediate backups. Each proposal
    /// draws fresh predictive samples, so targets tend to differ.
    pub fn propose_batch(&mut self, tree: &SearchTree, b: usize) -> Result<Vec<ExpansionTarget>> {
        if b == 0 {
            return Err(Error::InvalidParameter(
                "batch size must be at least 1".into(),
            ));
        }
        (0..b).map(|_| self.select_target(tree)).collect()
    }

    /// Build the generator request for `target` and assign it the next
    /// generation stream.
    pub fn request_for(
        &mut self,
        tree: &SearchTree,
        target: &ExpansionTarget,
    ) -> GenerationRequest {
        let lineage = target
            .lineage
            .iter()
            .map(|id| {
                let n = tree.at(*id);
                LineageRecord {
                    payload: n.payload().unwrap_or_default().to_string(),
                    score: n.score(),
                    feedback: n.feedback().map(str::to_string),
                }
            })
            .collect();
        let stream = derive_seed(self.seed, &[label::GENERATION, self.calls]);
        self.calls += 1;
        GenerationRequest::new(self.task.clone(), lineage, stream)
    }

    /// Insert a generated answer and back its score up.
    pub fn commit_result(
        &mut self,
        tree: &mut SearchTree,
        target: &ExpansionTarget,
        result: GenerationResult,
    ) -> Result<NodeId> {
        let answer = NewAnswer {
            payload: result.payload,
            score: if result.failed { None } else { result.score },
            feedback: result.feedback,
            generator: target.generator,
            failed: result.failed || result.score.is_none(),
        };
        let id = tree.add_answer_node(target.parent, answer)?;
        tree.backup(id, self.cfg.failure_policy())?;
        Ok(id)
    }
}

/// Result of [`run_search`].
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub tree: SearchTree,
    /// Hidden quality per answer node, when the generator reports it.
    pub latents: HashMap<NodeId, f64>,
    /// Set when a generator became unavailable before the budget ran out.
    pub aborted: Option<String>,
    /// Failure cause of each committed answer, in creation order.
    pub failures: Vec<Option<FailureKind>>,
    /// Seconds since the start of the run at which each answer was
    /// committed, in creation order.
    pub commit_times: Vec<f64>,
}

impl SearchOutcome {
    /// Failed generations among the first `n` answers.
    pub fn failed_generations(&self, n: usize) -> usize {
        self.failures.iter().take(n).flatten().count()
    }

    /// Transport faults (timeouts, malformed responses, crashes) among the
    /// first `n` answers.
    pub fn generator_faults(&self, n: usize) -> usize {
        self.failures
            .iter()
            .take(n)
            .filter(|f| matches!(f, Some(k) if *k != FailureKind::Reported))
            .count()
    }

    /// Latent quality of the best-scored answer.
    pub fn best_latent(&self) -> Option<f64> {
        let best = self.tree.select_best().ok()?;
        self.latents.get(&best).copied()
    }
}

/// Run Algorithm-1 style search for `budget` generator calls, `batch`
/// proposals at a time. One generator per configured generator slot.
pub fn run_search(
    cfg: &PolicyConfig,
    generators: &mut [&mut dyn Generator],
    budget: usize,
    seed: u64,
    batch: usize,
) -> Result<SearchOutcome> {
    run_search_on(cfg, "task", generators, budget, seed, batch)
}

/// [`run_search`] with the task description sent to generators.
pub fn run_search_on(
    cfg: &PolicyConfig,
    task: &str,
    generators: &mut [&mut dyn Generator],
    budget: usize,
    seed: u64,
    batch: usize,
) -> Result<SearchOutcome> {
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be at least 1".into()));
    }
    if generators.len() != cfg.generators {
        return Err(Error::Config(format!(
            "policy expects {} generators, got {}",
            cfg.generators,
            generators.len()
        )));
    }
    let mut searcher = Searcher::new(cfg.clone(), seed)?.with_task(task);
    let mut tree = searcher.new_tree();
    let mut out = SearchOutcome {
        tree: SearchTree::new(TreeShape::Plain),
        latents: HashMap::new(),
        aborted: None,
        failures: Vec::with_capacity(budget),
        commit_times: Vec::with_capacity(budget),
    };
    let start = Instant::now();
    let batch = batch.max(1);
    while tree.answer_count() < budget {
        let b = batch.min(budget - tree.answer_count());
        let targets = searcher.propose_batch(&tree, b)?;
        let requests: Vec<GenerationRequest> = targets
            .iter()
            .map(|t| searcher.request_for(&tree, t))
            .collect();
        let results = match dispatch(generators, &targets, &requests) {
            Ok(r) => r,
            Err(e) => {
                out.aborted = Some(e.to_string());
                break;
            }
        };
        for (target, result) in targets.iter().zip(results) {
            let latent = result.latent;
            let failure = match result.failure {
                None if result.failed || result.score.is_none() => Some(FailureKind::Reported),
                f => f,
            };
            out.failures.push(failure);
            let id = searcher.commit_result(&mut tree, target, result)?;
            if let Some(q) = latent {
                out.latents.insert(id, q);
            }
            out.commit_times.push(start.elapsed().as_secs_f64());
        }
    }
    out.tree = tree;
    Ok(out)
}

/// Send each request to its target's generator, batching per generator,
/// and return the results in request order.
fn dispatch(
    generators: &mut [&mut dyn Generator],
    targets: &[ExpansionTarget],
    requests: &[GenerationRequest],
) -> Result<Vec<GenerationResult>> {
    let mut results: Vec<Option<GenerationResult>> = vec![None; requests.len()];
    for (g, generator) in generators.iter_mut().enumerate() {
        let idx: Vec<usize> = (0..targets.len())
            .filter(|&i| targets[i].generator.index() == g)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let reqs: Vec<GenerationRequest> = idx.iter().map(|&i| requests[i].clone()).collect();
        let out = generator.generate_batch(&reqs)?;
        if out.len() != reqs.len() {
            return Err(Error::Invariant("generator returned a short batch".into()));
        }
        for (i, r) in idx.into_iter().zip(out) {
            results[i] = Some(r);
        }
    }
    results
        .into_iter()
        .map(|r| r.ok_or_else(|| Error::Invariant("request without a generator".into())))
        .collect()
}
