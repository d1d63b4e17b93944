//! Node-local hierarchical Gaussian model.
//!
//! Scores in group `j` follow `r = μ_α + σ_α ε_j + σ_y z` with `ε_j, z ~ N(0, 1)`,
//! `μ_α ~ N(m, s²)` and half-normal priors on both scales. Posterior draws
//! come from an adaptive random-walk Metropolis sampler over
//! `(μ_α, log σ_α, log σ_y, ε)`, with two extra joint moves (a location
//! shift and a scale rescaling that keep every `α_j` fixed) to get through
//! the non-centered funnel.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixedModelPriors {
    pub mu_alpha_mean: f64,
    pub mu_alpha_sd: f64,
    /// Half-normal scale for σ_α.
    pub sigma_alpha_scale: f64,
    /// Half-normal scale for σ_y.
    pub sigma_y_scale: f64,
}

impl Default for MixedModelPriors {
    fn default() -> Self {
        MixedModelPriors {
            mu_alpha_mean: 0.5,
            mu_alpha_sd: 0.2,
            sigma_alpha_scale: 0.2,
            sigma_y_scale: 0.3,
        }
    }
}

impl MixedModelPriors {
    pub fn validate(&self) -> Result<()> {
        if !self.mu_alpha_mean.is_finite() {
            return Err(Error::InvalidParameter(
                "mu_alpha_mean must be finite".into(),
            ));
        }
        for (name, v) in [
            ("mu_alpha_sd", self.mu_alpha_sd),
            ("sigma_alpha_scale", self.sigma_alpha_scale),
            ("sigma_y_scale", self.sigma_y_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} must be positive"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub warmup: usize,
    pub keep: usize,
    /// Keep every `thin`-th post-warmup state.
    pub thin: usize,
    /// Acceptance rate the proposal scales adapt toward.
    pub target_accept: f64,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            warmup: 500,
            keep: 500,
            thin: 1,
            target_accept: 0.4,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup == 0 || self.keep == 0 || self.thin == 0 {
            return Err(Error::InvalidParameter(
                "warmup, keep and thin must be >= 1".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidParameter(
                "target_accept must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Score lists, one per group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupedObservations {
    groups: Vec<Vec<f64>>,
}

impl GroupedObservations {
    pub fn new(groups: Vec<Vec<f64>>) -> Self {
        GroupedObservations { groups }
    }

    /// From parallel `(group index, score)` lists.
    pub fn from_indexed(indices: &[usize], scores: &[f64], n_groups: usize) -> Self {
        let mut groups = vec![Vec::new(); n_groups];
        for (&j, &r) in indices.iter().zip(scores) {
            groups[j].push(r);
        }
        GroupedObservations { groups }
    }

    pub fn groups(&self) -> &[Vec<f64>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

/// One joint parameter state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub mu_alpha: f64,
    pub sigma_alpha: f64,
    pub sigma_y: f64,
    pub eps: Vec<f64>,
}

impl Draw {
    pub fn alpha(&self, j: usize) -> f64 {
        self.mu_alpha + self.sigma_alpha * self.eps[j]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub mu_alpha: f64,
    pub sigma_alpha: f64,
    pub sigma_y: f64,
    pub eps: f64,
    pub shift: f64,
    pub rescale: f64,
}

impl Acceptance {
    pub fn min(&self) -> f64 {
        [
            self.mu_alpha,
            self.sigma_alpha,
            self.sigma_y,
            self.eps,
            self.shift,
            self.rescale,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        [
            self.mu_alpha,
            self.sigma_alpha,
            self.sigma_y,
            self.eps,
            self.shift,
            self.rescale,
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Post-warmup acceptance rate of each move type.
    pub acceptance: Acceptance,
    pub ess_mu_alpha: f64,
    pub ess_sigma_alpha: f64,
    pub ess_sigma_y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedModelFit {
    draws: Vec<Draw>,
    diagnostics: Diagnostics,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictiveTarget {
    Group(usize),
    /// A fresh group with no observations of its own.
    Gen,
}

impl MixedModelFit {
    pub fn from_draws(draws: Vec<Draw>) -> Self {
        MixedModelFit {
            draws,
            diagnostics: Diagnostics::default(),
        }
    }

    /// Draws from the prior alone, used when no group holds an observation.
    pub fn from_prior<R: Rng + ?Sized>(
        priors: &MixedModelPriors,
        n_groups: usize,
        count: usize,
        rng: &mut R,
    ) -> Self {
        let draws = (0..count.max(1))
            .map(|_| {
                let z = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
                Draw {
                    mu_alpha: priors.mu_alpha_mean + priors.mu_alpha_sd * z(rng),
                    sigma_alpha: priors.sigma_alpha_scale * z(rng).abs(),
                    sigma_y: priors.sigma_y_scale * z(rng).abs(),
                    eps: (0..n_groups).map(|_| z(rng)).collect(),
                }
            })
            .collect();
        Self::from_draws(draws)
    }

    pub fn draws(&self) -> &[Draw] {
        &self.draws
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn n_groups(&self) -> usize {
        self.draws.first().map_or(0, |d| d.eps.len())
    }

    /// Posterior mean of each group intercept.
    pub fn mean_alpha(&self) -> Vec<f64> {
        let n = self.draws.len() as f64;
        (0..self.n_groups())
            .map(|j| self.draws.iter().map(|d| d.alpha(j)).sum::<f64>() / n)
            .collect()
    }

    pub fn mean_of(&self, f: impl Fn(&Draw) -> f64) -> f64 {
        self.draws.iter().map(f).sum::<f64>() / self.draws.len() as f64
    }

    /// Pick one joint posterior draw uniformly.
    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> &Draw {
        &self.draws[rng.random_range(0..self.draws.len())]
    }

    /// One posterior-predictive score for `target`, built from a single
    /// joint posterior draw.
    pub fn predictive_draw<R: Rng + ?Sized>(
        &self,
        target: PredictiveTarget,
        rng: &mut R,
    ) -> Result<f64> {
        if let PredictiveTarget::Group(j) = target {
            if j >= self.n_groups() {
                return Err(Error::GroupOutOfRange {
                    index: j,
                    groups: self.n_groups(),
                });
            }
        }
        let draw = self.pick(rng);
        Ok(predict_with(draw, target, rng))
    }
}

/// Predictive score under a fixed parameter draw.
pub fn predict_with<R: Rng + ?Sized>(draw: &Draw, target: PredictiveTarget, rng: &mut R) -> f64 {
    let eps = match target {
        PredictiveTarget::Group(j) => draw.eps[j],
        PredictiveTarget::Gen => StandardNormal.sample(rng),
    };
    let z: f64 = StandardNormal.sample(rng);
    draw.mu_alpha + draw.sigma_alpha * eps + draw.sigma_y * z
}

/// Per-group sufficient statistics: count, mean, centered sum of squares.
#[derive(Clone, Copy, Debug)]
struct GroupStats {
    n: f64,
    mean: f64,
    ss: f64,
}

fn group_stats(obs: &GroupedObservations) -> Vec<GroupStats> {
    obs.groups
        .iter()
        .map(|g| {
            let n = g.len() as f64;
            if g.is_empty() {
                return GroupStats {
                    n: 0.0,
                    mean: 0.0,
                    ss: 0.0,
                };
            }
            let mean = g.iter().sum::<f64>() / n;
            let ss = g.iter().map(|r| (r - mean) * (r - mean)).sum();
            GroupStats { n, mean, ss }
        })
        .collect()
}

fn group_loglik(g: &GroupStats, alpha: f64, sigma_y: f64) -> f64 {
    if g.n == 0.0 {
        return 0.0;
    }
    let d = g.mean - alpha;
    -g.n * (sigma_y.ln() + 0.5 * LN_2PI) - (g.ss + g.n * d * d) / (2.0 * sigma_y * sigma_y)
}

fn half_normal_logpdf(x: f64, scale: f64) -> f64 {
    // ln 2 - ln(scale) - ln(2π)/2 - x²/(2 scale²)
    std::f64::consts::LN_2 - scale.ln() - 0.5 * LN_2PI - x * x / (2.0 * scale * scale)
}

fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -sd.ln() - 0.5 * LN_2PI - 0.5 * z * z
}

/// Unnormalized log posterior density in `(μ_α, σ_α, σ_y, ε)` coordinates.
pub fn log_posterior(
    params: &Draw,
    obs: &GroupedObservations,
    priors: &MixedModelPriors,
) -> Result<f64> {
    if !(params.sigma_alpha > 0.0) || !(params.sigma_y > 0.0) {
        return Err(Error::InvalidParameter("scales must be positive".into()));
    }
    if params.eps.len() != obs.len() {
        return Err(Error::InvalidParameter(format!(
            "{} group effects for {} groups",
            params.eps.len(),
            obs.len()
        )));
    }
    let stats = group_stats(obs);
    Ok(log_density(params, &stats, priors))
}

fn log_density(p: &Draw, stats: &[GroupStats], priors: &MixedModelPriors) -> f64 {
    let mut lp = normal_logpdf(p.mu_alpha, priors.mu_alpha_mean, priors.mu_alpha_sd)
        + half_normal_logpdf(p.sigma_alpha, priors.sigma_alpha_scale)
        + half_normal_logpdf(p.sigma_y, priors.sigma_y_scale);
    for (g, e) in stats.iter().zip(&p.eps) {
        lp += -0.5 * e * e + group_loglik(g, p.mu_alpha + p.sigma_alpha * e, p.sigma_y);
    }
    lp
}

/// Adaptive proposal scale with acceptance bookkeeping.
#[derive(Clone, Copy, Debug)]
struct Proposal {
    log_scale: f64,
    tried: u64,
    accepted: u64,
}

impl Proposal {
    fn new(scale: f64) -> Self {
        Proposal {
            log_scale: scale.ln(),
            tried: 0,
            accepted: 0,
        }
    }

    fn step<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        z * self.log_scale.exp()
    }

    fn record(&mut self, accepted: bool) {
        self.tried += 1;
        self.accepted += accepted as u64;
    }

    fn rate(&self) -> f64 {
        if self.tried == 0 {
            0.0
        } else {
            self.accepted as f64 / self.tried as f64
        }
    }

    fn adapt(&mut self, target: f64, gain: f64) {
        self.log_scale += gain * (self.rate() - target);
        self.log_scale = self.log_scale.clamp(-12.0, 3.0);
        self.tried = 0;
        self.accepted = 0;
    }
}

struct Chain<'a> {
    stats: &'a [GroupStats],
    priors: &'a MixedModelPriors,
    mu: f64,
    ls_a: f64,
    ls_y: f64,
    eps: Vec<f64>,
    moves: [Proposal; 6],
}

const MU: usize = 0;
const LSA: usize = 1;
const LSY: usize = 2;
const EPS: usize = 3;
const SHIFT: usize = 4;
const RESCALE: usize = 5;

impl<'a> Chain<'a> {
    fn new(stats: &'a [GroupStats], priors: &'a MixedModelPriors) -> Self {
        let total: f64 = stats.iter().map(|g| g.n).sum();
        let grand = stats.iter().map(|g| g.n * g.mean).sum::<f64>() / total;
        let mu = grand.clamp(
            priors.mu_alpha_mean - 3.0 * priors.mu_alpha_sd,
            priors.mu_alpha_mean + 3.0 * priors.mu_alpha_sd,
        );
        let sigma_a = 0.5 * priors.sigma_alpha_scale;
        let eps = stats
            .iter()
            .map(|g| {
                if g.n == 0.0 {
                    0.0
                } else {
                    ((g.mean - mu) / sigma_a).clamp(-3.0, 3.0)
                }
            })
            .collect();
        Chain {
            stats,
            priors,
            mu,
            ls_a: sigma_a.ln(),
            ls_y: (0.5 * priors.sigma_y_scale).ln(),
            eps,
            moves: [
                Proposal::new(0.5 * priors.mu_alpha_sd),
                Proposal::new(0.5),
                Proposal::new(0.5),
                Proposal::new(0.8),
                Proposal::new(0.5 * priors.mu_alpha_sd),
                Proposal::new(0.3),
            ],
        }
    }

    fn hyper_logp(&self, mu: f64, ls_a: f64, ls_y: f64) -> f64 {
        let (sa, sy) = (ls_a.exp(), ls_y.exp());
        normal_logpdf(mu, self.priors.mu_alpha_mean, self.priors.mu_alpha_sd)
            + half_normal_logpdf(sa, self.priors.sigma_alpha_scale)
            + half_normal_logpdf(sy, self.priors.sigma_y_scale)
            + ls_a
            + ls_y
    }

    fn group_logp(&self, j: usize, mu: f64, sigma_a: f64, eps: f64, sigma_y: f64) -> f64 {
        -0.5 * eps * eps + group_loglik(&self.stats[j], mu + sigma_a * eps, sigma_y)
    }

    /// Log density in the sampler's unconstrained coordinates.
    fn logp_with(&self, mu: f64, ls_a: f64, ls_y: f64, eps: &[f64]) -> f64 {
        let (sa, sy) = (ls_a.exp(), ls_y.exp());
        let mut lp = self.hyper_logp(mu, ls_a, ls_y);
        for (j, e) in eps.iter().enumerate() {
            lp += self.group_logp(j, mu, sa, *e, sy);
        }
        lp
    }

    fn logp(&self) -> f64 {
        self.logp_with(self.mu, self.ls_a, self.ls_y, &self.eps)
    }

    fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
        log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
    }

    fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut cur = self.logp();

        let mu_new = self.mu + self.moves[MU].step(rng);
        let cand = self.logp_with(mu_new, self.ls_a, self.ls_y, &self.eps);
        let ok = Self::accept(cand - cur, rng);
        self.moves[MU].record(ok);
        if ok {
            self.mu = mu_new;
            cur = cand;
        }

        let ls_a = self.ls_a + self.moves[LSA].step(rng);
        let cand = self.logp_with(self.mu, ls_a, self.ls_y, &self.eps);
        let ok = Self::accept(cand - cur, rng);
        self.moves[LSA].record(ok);
        if ok {
            self.ls_a = ls_a;
            cur = cand;
        }

        let ls_y = self.ls_y + self.moves[LSY].step(rng);
        let cand = self.logp_with(self.mu, self.ls_a, ls_y, &self.eps);
        let ok = Self::accept(cand - cur, rng);
        self.moves[LSY].record(ok);
        if ok {
            self.ls_y = ls_y;
            cur = cand;
        }

        let (sa, sy) = (self.ls_a.exp(), self.ls_y.exp());
        for j in 0..self.eps.len() {
            let old = self.group_logp(j, self.mu, sa, self.eps[j], sy);
            let e = self.eps[j] + self.moves[EPS].step(rng);
            let new = self.group_logp(j, self.mu, sa, e, sy);
            let ok = Self::accept(new - old, rng);
            self.moves[EPS].record(ok);
            if ok {
                self.eps[j] = e;
                cur += new - old;
            }
        }

        // Shift μ while holding every α_j fixed (unit Jacobian).
        let delta = self.moves[SHIFT].step(rng);
        let shifted: Vec<f64> = self.eps.iter().map(|e| e - delta / sa).collect();
        let cand = self.logp_with(self.mu + delta, self.ls_a, self.ls_y, &shifted);
        let ok = Self::accept(cand - cur, rng);
        self.moves[SHIFT].record(ok);
        if ok {
            self.mu += delta;
            self.eps = shifted;
            cur = cand;
        }

        // Rescale σ_α against ε, again holding α_j fixed. The map
        // (log σ_α, ε) -> (log σ_α + δ, ε e^{-δ}) has Jacobian e^{-Jδ}.
        let delta = self.moves[RESCALE].step(rng);
        let factor = (-delta).exp();
        let scaled: Vec<f64> = self.eps.iter().map(|e| e * factor).collect();
        let cand = self.logp_with(self.mu, self.ls_a + delta, self.ls_y, &scaled);
        let jacobian = -(self.eps.len() as f64) * delta;
        let ok = Self::accept(cand - cur + jacobian, rng);
        self.moves[RESCALE].record(ok);
        if ok {
            self.ls_a += delta;
            self.eps = scaled;
        }
    }

    fn snapshot(&self) -> Draw {
        Draw {
            mu_alpha: self.mu,
            sigma_alpha: self.ls_a.exp(),
            sigma_y: self.ls_y.exp(),
            eps: self.eps.clone(),
        }
    }
}

/// Fit the hierarchical model to grouped scores.
pub fn fit(
    obs: &GroupedObservations,
    priors: &MixedModelPriors,
    cfg: &McmcConfig,
) -> Result<MixedModelFit> {
    priors.validate()?;
    cfg.validate()?;
    if obs.total() == 0 {
        return Err(Error::EmptyObservations);
    }
    if let Some(r) = obs.groups.iter().flatten().find(|r| !r.is_finite()) {
        return Err(Error::NonFiniteScore(*r));
    }
    let stats = group_stats(obs);
    let mut chain = Chain::new(&stats, priors);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    const BATCH: usize = 25;
    for i in 0..cfg.warmup {
        chain.sweep(&mut rng);
        if (i + 1) % BATCH == 0 {
            let gain = (10.0 / ((i + 1) / BATCH) as f64).sqrt().min(1.0) * 2.0;
            for m in &mut chain.moves {
                m.adapt(cfg.target_accept, gain);
            }
        }
    }
    for m in &mut chain.moves {
        m.tried = 0;
        m.accepted = 0;
    }

    let mut draws = Vec::with_capacity(cfg.keep);
    while draws.len() < cfg.keep {
        for _ in 0..cfg.thin {
            chain.sweep(&mut rng);
        }
        draws.push(chain.snapshot());
    }

    let m = &chain.moves;
    let series = |f: fn(&Draw) -> f64| draws.iter().map(f).collect::<Vec<_>>();
    let diagnostics = Diagnostics {
        acceptance: Acceptance {
            mu_alpha: m[MU].rate(),
            sigma_alpha: m[LSA].rate(),
            sigma_y: m[LSY].rate(),
            eps: m[EPS].rate(),
            shift: m[SHIFT].rate(),
            rescale: m[RESCALE].rate(),
        },
        ess_mu_alpha: effective_sample_size(&series(|d| d.mu_alpha)),
        ess_sigma_alpha: effective_sample_size(&series(|d| d.sigma_alpha)),
        ess_sigma_y: effective_sample_size(&series(|d| d.sigma_y)),
    };
    Ok(MixedModelFit { draws, diagnostics })
}

/// Effective sample size from Geyer's initial positive sequence of
/// autocorrelation pairs.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| {
        xs[..n - lag]
            .iter()
            .zip(&xs[lag..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / (n as f64 * var)
    };
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    (n as f64 / tau.max(1.0 / n as f64)).min(n as f64)
}
