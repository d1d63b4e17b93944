//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use abmcts::generator::{GenerationRequest, GenerationResult, Generator};
use abmcts::mixed_model::MixedModelPriors;
use abmcts::policy::{PolicyConfig, SearchOutcome};
use abmcts::tree::{FailurePolicy, NewAnswer, NodeId, SearchTree, TreeShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

pub fn obs(tree: &SearchTree, id: NodeId) -> Vec<f64> {
    tree.node(id).unwrap().observed_scores()
}

pub fn add(tree: &mut SearchTree, parent: NodeId, score: f64) -> NodeId {
    let id = tree
        .add_answer_node(parent, NewAnswer::scored(format!("s{score}"), score))
        .unwrap();
    tree.backup(id, FailurePolicy::Skip).unwrap();
    id
}

pub fn add_root(tree: &mut SearchTree, score: f64) -> NodeId {
    let root = tree.root();
    add(tree, root, score)
}

/// The mixed-model example tree: root N with N1 (0.8), N2 (0.0), N3 (0.2);
/// N1 has children N1' (0.8) and N2' (1.0); N3 has one child (0.3).
pub struct MixedFixture {
    pub tree: SearchTree,
    pub n1: NodeId,
    pub n2: NodeId,
    pub n3: NodeId,
    pub n1p: NodeId,
    pub n2p: NodeId,
    pub n3c: NodeId,
}

pub fn mixed_fixture() -> MixedFixture {
    let mut tree = SearchTree::new(TreeShape::Mixed);
    let root = tree.root();
    let n1 = add(&mut tree, root, 0.8);
    let n1p = add(&mut tree, n1, 0.8);
    let n2p = add(&mut tree, n1, 1.0);
    let n2 = add(&mut tree, root, 0.0);
    let n3 = add(&mut tree, root, 0.2);
    let n3c = add(&mut tree, n3, 0.3);
    MixedFixture {
        tree,
        n1,
        n2,
        n3,
        n1p,
        n2p,
        n3c,
    }
}

/// The same scores arranged as an aggregated (GEN + CONT) tree.
pub struct AggregatedFixture {
    pub tree: SearchTree,
    pub n1: NodeId,
    pub n2: NodeId,
    pub n3: NodeId,
}

pub fn aggregated_fixture() -> AggregatedFixture {
    let mut tree = SearchTree::new(TreeShape::Aggregated);
    let root = tree.root();
    let n1 = add(&mut tree, root, 0.8);
    add(&mut tree, n1, 0.8);
    add(&mut tree, n1, 1.0);
    let n2 = add(&mut tree, root, 0.0);
    let n3 = add(&mut tree, root, 0.2);
    add(&mut tree, n3, 0.3);
    AggregatedFixture { tree, n1, n2, n3 }
}

// ---------------------------------------------------------------------------
// Normal-inverse-χ² grid oracle

/// Posterior mean and variance of μ under a normal-inverse-χ² prior
/// `(m0, κ0, ν0, τ0²)` and Gaussian likelihood, by brute-force integration
/// of prior × likelihood over a (μ, log σ²) grid.
pub fn nix_grid_moments(prior: (f64, f64, f64, f64), data: &[f64]) -> (f64, f64) {
    let (m0, k0, nu0, t0) = prior;
    let n = data.len() as f64;
    let lo = data.iter().cloned().fold(m0, f64::min);
    let hi = data.iter().cloned().fold(m0, f64::max);
    let log_joint = |mu: f64, s2: f64| {
        let prior_s2 = -(nu0 / 2.0 + 1.0) * s2.ln() - nu0 * t0 / (2.0 * s2);
        let prior_mu = -0.5 * s2.ln() - k0 * (mu - m0).powi(2) / (2.0 * s2);
        let lik = -0.5 * n * s2.ln() - data.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / (2.0 * s2);
        prior_s2 + prior_mu + lik
    };
    // log σ² spans far into the heavy right tail.
    let (ls_lo, ls_hi, n_s) = ((t0.min(1e-3)).ln() - 12.0, t0.ln() + 40.0, 3000);
    let n_mu = 1200;
    let d_ls = (ls_hi - ls_lo) / n_s as f64;
    let mut cells = Vec::with_capacity(n_s);
    let mut max_lw = f64::NEG_INFINITY;
    for i in 0..n_s {
        let ls = ls_lo + (i as f64 + 0.5) * d_ls;
        let s2 = ls.exp();
        let sd = s2.sqrt();
        let (a, b) = (lo - 12.0 * sd, hi + 12.0 * sd);
        let d_mu = (b - a) / n_mu as f64;
        for j in 0..n_mu {
            let mu = a + (j as f64 + 0.5) * d_mu;
            // Jacobian of the log σ² axis, times the cell area.
            let lw = log_joint(mu, s2) + ls + d_mu.ln();
            max_lw = max_lw.max(lw);
            cells.push((mu, lw));
        }
    }
    let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (mu, lw) in cells {
        let w = (lw - max_lw).exp();
        z += w;
        s1 += w * mu;
        s2 += w * mu * mu;
    }
    let mean = s1 / z;
    (mean, s2 / z - mean * mean)
}

// ---------------------------------------------------------------------------
// Hierarchical-model grid oracle

/// Posterior mean and standard deviation of one parameter.
#[derive(Clone, Copy, Debug)]
pub struct Moment {
    pub mean: f64,
    pub sd: f64,
}

/// Posterior moments of `(μ_α, σ_α, σ_y)` for the non-centered random
/// intercept model, integrating each group's ε out in closed form and the
/// remaining three parameters on a dense midpoint grid.
pub fn mixed_grid_moments(groups: &[Vec<f64>], priors: &MixedModelPriors, n: usize) -> [Moment; 3] {
    let stats: Vec<(f64, f64, f64)> = groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let k = g.len() as f64;
            let mean = g.iter().sum::<f64>() / k;
            let ss = g.iter().map(|r| (r - mean).powi(2)).sum::<f64>();
            (k, mean, ss)
        })
        .collect();
    // Each group is multivariate normal with covariance σy² I + σα² 11ᵀ.
    let group_ll = |mu: f64, sa: f64, sy: f64| -> f64 {
        let (sa2, sy2) = (sa * sa, sy * sy);
        stats
            .iter()
            .map(|&(k, mean, ss)| {
                let v = sy2 + k * sa2;
                -(k - 1.0) * sy.ln() - 0.5 * v.ln() - ss / (2.0 * sy2) - k * (mean - mu).powi(2) / (2.0 * v)
            })
            .sum()
    };
    let p = priors;
    let mu_lo = p.mu_alpha_mean - 7.0 * p.mu_alpha_sd;
    let mu_hi = p.mu_alpha_mean + 7.0 * p.mu_alpha_sd;
    let (sa_hi, sy_hi) = (6.0 * p.sigma_alpha_scale, 6.0 * p.sigma_y_scale);
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let d = (hi - lo) / n as f64;
        (0..n).map(|i| lo + (i as f64 + 0.5) * d).collect()
    };
    let (mus, sas, sys) = (axis(mu_lo, mu_hi), axis(0.0, sa_hi), axis(0.0, sy_hi));
    let mut lw = Vec::with_capacity(n * n * n);
    let mut max_lw = f64::NEG_INFINITY;
    for &mu in &mus {
        let lp_mu = -0.5 * ((mu - p.mu_alpha_mean) / p.mu_alpha_sd).powi(2);
        for &sa in &sas {
            let lp_sa = -0.5 * (sa / p.sigma_alpha_scale).powi(2);
            for &sy in &sys {
                let lp_sy = -0.5 * (sy / p.sigma_y_scale).powi(2);
                let v = lp_mu + lp_sa + lp_sy + group_ll(mu, sa, sy);
                max_lw = max_lw.max(v);
                lw.push(v);
            }
        }
    }
    let mut z = 0.0;
    let mut s1 = [0.0; 3];
    let mut s2 = [0.0; 3];
    let mut i = 0;
    for &mu in &mus {
        for &sa in &sas {
            for &sy in &sys {
                let w = (lw[i] - max_lw).exp();
                i += 1;
                z += w;
                for (k, x) in [mu, sa, sy].into_iter().enumerate() {
                    s1[k] += w * x;
                    s2[k] += w * x * x;
                }
            }
        }
    }
    std::array::from_fn(|k| {
        let mean = s1[k] / z;
        Moment {
            mean,
            sd: (s2[k] / z - mean * mean).max(0.0).sqrt(),
        }
    })
}

// ---------------------------------------------------------------------------
// Monte Carlo and test statistics

/// `P(X > Y)` for independent `X ~ Beta(a1, b1)`, `Y ~ Beta(a2, b2)`,
/// estimated from `draws` paired samples.
pub fn beta_dominance_mc(x: (f64, f64), y: (f64, f64), draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0bac_1e);
    let bx = Beta::new(x.0, x.1).unwrap();
    let by = Beta::new(y.0, y.1).unwrap();
    let wins = (0..draws)
        .filter(|_| bx.sample(&mut rng) > by.sample(&mut rng))
        .count();
    wins as f64 / draws as f64
}

/// Whether `hits` out of `n` is within `z` standard errors of `p`, with the
/// oracle's own Monte Carlo error (`n_oracle` draws) folded in.
pub fn within_binomial(hits: usize, n: usize, p: f64, n_oracle: usize, z: f64) -> bool {
    let f = hits as f64 / n as f64;
    let var = p * (1.0 - p) * (1.0 / n as f64 + 1.0 / n_oracle as f64);
    (f - p).abs() <= z * var.sqrt().max(1e-12)
}

/// Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(mut samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at significance `alpha`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// One-sided Welch t-test of `mean(a) > mean(b)`; returns the p-value.
pub fn welch_greater(a: &[f64], b: &[f64]) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return if ma > mb { 0.0 } else { 1.0 };
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2.powi(2) / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t)
}

// ---------------------------------------------------------------------------
// Generators for search tests

/// Scores drawn uniformly from the request stream; handy where only the
/// tree shape matters.
pub struct UniformGenerator;

impl Generator for UniformGenerator {
    fn generate(&mut self, req: &GenerationRequest) -> abmcts::Result<GenerationResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(req.stream);
        let s: f64 = rng.random();
        Ok(GenerationResult::scored(format!("u{s}"), s))
    }
}

/// Records every request it receives.
pub struct Recording<G> {
    pub inner: G,
    pub requests: Vec<GenerationRequest>,
}

impl<G: Generator> Generator for Recording<G> {
    fn generate(&mut self, req: &GenerationRequest) -> abmcts::Result<GenerationResult> {
        self.requests.push(req.clone());
        self.inner.generate(req)
    }
}

pub fn run_with(cfg: &PolicyConfig, gen: &mut dyn Generator, budget: usize, seed: u64) -> SearchOutcome {
    abmcts::policy::run_search(cfg, &mut [gen], budget, seed, 1).unwrap()
}

pub fn export_bytes(tree: &SearchTree) -> Vec<u8> {
    let mut out = Vec::new();
    abmcts::export::export_tree(tree, abmcts::export::ExportFormat::Records, &mut out).unwrap();
    out
}
