//! Conjugate score models and Thompson sampling.
//!
//! Scores backed up to a node are modelled either as Gaussian with a
//! normal-inverse-χ² prior, or directly as Beta-distributed (soft-count
//! update, scores in `[0, 1]`). Updates are pure; samplers take an explicit
//! rng.

use rand::Rng;
use rand_distr::{Beta, ChiSquared, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which mean enters the shrinkage term of the scale update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShrinkageTerm {
    /// `κ₀N/(κ₀+N) · (r̄ − m₀)²`, the exact conjugate update.
    #[default]
    PriorMean,
    /// Same weight but with the posterior location `m̂` in place of `m₀`.
    /// Not conjugate; kept for comparison runs.
    PosteriorMean,
}

/// Normal-inverse-χ² parameters `(m, κ, ν, τ²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianPosterior {
    pub m: f64,
    pub kappa: f64,
    pub nu: f64,
    pub tau2: f64,
}

impl Default for GaussianPosterior {
    fn default() -> Self {
        GaussianPosterior {
            m: 0.0,
            kappa: 1.0,
            nu: 1.0,
            tau2: 0.1,
        }
    }
}

fn check_finite(scores: &[f64]) -> Result<()> {
    match scores.iter().find(|s| !s.is_finite()) {
        Some(s) => Err(Error::NonFiniteScore(*s)),
        None => Ok(()),
    }
}

impl GaussianPosterior {
    pub fn new(m: f64, kappa: f64, nu: f64, tau2: f64) -> Result<Self> {
        let p = GaussianPosterior { m, kappa, nu, tau2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.m.is_finite() {
            return Err(Error::InvalidParameter(format!("m = {}", self.m)));
        }
        for (name, v) in [("kappa", self.kappa), ("nu", self.nu), ("tau2", self.tau2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn update(&self, scores: &[f64]) -> Result<Self> {
        self.update_with(scores, ShrinkageTerm::PriorMean)
    }

    pub fn update_with(&self, scores: &[f64], term: ShrinkageTerm) -> Result<Self> {
        check_finite(scores)?;
        if scores.is_empty() {
            return Ok(*self);
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let ss: f64 = scores.iter().map(|r| (r - mean) * (r - mean)).sum();
        let kappa = self.kappa + n;
        let m = (self.kappa * self.m + n * mean) / kappa;
        let nu = self.nu + n;
        let center = match term {
            ShrinkageTerm::PriorMean => self.m,
            ShrinkageTerm::PosteriorMean => m,
        };
        let shrink = n * self.kappa / (self.kappa + n) * (mean - center).powi(2);
        let tau2 = (self.nu * self.tau2 + ss + shrink) / nu;
        Ok(GaussianPosterior { m, kappa, nu, tau2 })
    }

    /// Exact draw from the posterior predictive: σ² ~ Scaled-Inv-χ²(ν, τ²),
    /// μ ~ N(m, σ²/κ), r ~ N(μ, σ²).
    pub fn sample_predictive<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let chi = ChiSquared::new(self.nu).expect("nu validated positive");
        let sigma2 = self.nu * self.tau2 / chi.sample(rng);
        let sigma = sigma2.sqrt();
        let mu = Normal::new(self.m, sigma / self.kappa.sqrt())
            .expect("finite scale")
            .sample(rng);
        Normal::new(mu, sigma).expect("finite scale").sample(rng)
    }

    /// Student-t parameters `(dof, location, scale)` of the predictive.
    pub fn predictive_student_t(&self) -> (f64, f64, f64) {
        (
            self.nu,
            self.m,
            (self.tau2 * (1.0 + 1.0 / self.kappa)).sqrt(),
        )
    }

    pub fn predictive_mean(&self) -> f64 {
        self.m
    }
}

/// Beta parameters `(α, β)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BetaPosterior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BetaPosterior {
    fn default() -> Self {
        BetaPosterior {
            alpha: 0.5,
            beta: 0.5,
        }
    }
}

impl BetaPosterior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = BetaPosterior { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Soft-count update: α += Σr, β += Σ(1−r). Fractional scores allowed.
    pub fn update(&self, scores: &[f64]) -> Result<Self> {
        check_finite(scores)?;
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::ScoreOutOfRange(*s));
        }
        // Accumulating onto the prior makes a batch update bit-identical
        // to the same scores applied one at a time.
        let (alpha, beta) = scores
            .iter()
            .fold((self.alpha, self.beta), |(a, b), r| (a + r, b + (1.0 - r)));
        Ok(BetaPosterior { alpha, beta })
    }

    pub fn sample_predictive<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Beta::new(self.alpha, self.beta)
            .expect("alpha, beta validated positive")
            .sample(rng)
    }

    pub fn predictive_mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

/// A conjugate prior together with its update rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ConjugatePrior {
    Gaussian {
        #[serde(flatten)]
        prior: GaussianPosterior,
        #[serde(default)]
        shrinkage: ShrinkageTerm,
    },
    Beta {
        #[serde(flatten)]
        prior: BetaPosterior,
    },
}

impl ConjugatePrior {
    pub fn gaussian() -> Self {
        ConjugatePrior::Gaussian {
            prior: GaussianPosterior::default(),
            shrinkage: ShrinkageTerm::PriorMean,
        }
    }

    pub fn beta() -> Self {
        ConjugatePrior::Beta {
            prior: BetaPosterior::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConjugatePrior::Gaussian { prior, .. } => prior.validate(),
            ConjugatePrior::Beta { prior } => prior.validate(),
        }
    }

    pub fn posterior(&self, scores: &[f64]) -> Result<Posterior> {
        Ok(match self {
            ConjugatePrior::Gaussian { prior, shrinkage } => {
                Posterior::Gaussian(prior.update_with(scores, *shrinkage)?)
            }
            ConjugatePrior::Beta { prior } => Posterior::Beta(prior.update(scores)?),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Posterior {
    Gaussian(GaussianPosterior),
    Beta(BetaPosterior),
}

impl Posterior {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Posterior::Gaussian(p) => p.sample_predictive(rng),
            Posterior::Beta(p) => p.sample_predictive(rng),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Posterior::Gaussian(p) => p.predictive_mean(),
            Posterior::Beta(p) => p.predictive_mean(),
        }
    }
}

/// Action with the largest sampled value. Exact ties are broken uniformly
/// at random; NaN never wins against a number.
pub fn thompson_argmax<A: Clone, R: Rng + ?Sized>(samples: &[(A, f64)], rng: &mut R) -> Result<A> {
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let best = samples
        .iter()
        .map(|(_, v)| key(*v))
        .fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<&A> = samples
        .iter()
        .filter(|(_, v)| key(*v) == best)
        .map(|(a, _)| a)
        .collect();
    match winners.len() {
        0 => Err(Error::EmptyActions),
        1 => Ok(winners[0].clone()),
        n => Ok(winners[rng.random_range(0..n)].clone()),
    }
}
