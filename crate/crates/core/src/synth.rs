//! Synthetic answer landscapes standing in for an LLM plus evaluator.
//!
//! Each answer carries a hidden quality `q ∈ [0, 1]`. Direct generation
//! draws `q ~ Beta(a, b)`; refinement moves the parent's quality by
//! `N(+drift, sd²)` with probability `improve_prob` and by `N(−drift, sd²)`
//! otherwise, clamped to `[0, 1]`. The evaluator reports `clamp(q + noise)`.
//! The quality is written into the payload as `q=<value>` so refinement
//! can read it back from the lineage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{FailureKind, GenerationRequest, GenerationResult, Generator};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandscapeParams {
    pub root_a: f64,
    pub root_b: f64,
    pub refine_drift: f64,
    pub refine_sd: f64,
    pub improve_prob: f64,
    pub obs_noise: f64,
    pub success_threshold: f64,
    /// Probability that an answer fails evaluation and gets no score.
    pub fail_prob: f64,
}

impl Default for LandscapeParams {
    fn default() -> Self {
        LandscapeParams {
            root_a: 1.0,
            root_b: 1.0,
            refine_drift: 0.0,
            refine_sd: 0.05,
            improve_prob: 0.5,
            obs_noise: 0.0,
            success_threshold: 0.9,
            fail_prob: 0.0,
        }
    }
}

impl LandscapeParams {
    /// Refinement reliably improves answers; depth pays off.
    pub fn deep_favored() -> Self {
        LandscapeParams {
            root_a: 2.0,
            root_b: 8.0,
            refine_drift: 0.15,
            refine_sd: 0.05,
            improve_prob: 0.9,
            obs_noise: 0.05,
            success_threshold: 0.9,
            fail_prob: 0.0,
        }
    }

    /// Refinement is a small mean-zero walk; good answers come from
    /// the heavy right tail of fresh samples.
    pub fn wide_favored() -> Self {
        LandscapeParams {
            root_a: 0.5,
            root_b: 4.0,
            refine_drift: 0.0,
            refine_sd: 0.02,
            improve_prob: 0.5,
            obs_noise: 0.05,
            success_threshold: 0.5,
            fail_prob: 0.0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "deep" | "deep-favored" => Some(Self::deep_favored()),
            "wide" | "wide-favored" => Some(Self::wide_favored()),
            "uniform" => Some(Self::default()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.root_a > 0.0 && self.root_b > 0.0) {
            return bad("root Beta parameters must be positive");
        }
        if !(self.refine_sd > 0.0) || !self.refine_drift.is_finite() {
            return bad("refine_sd must be positive and refine_drift finite");
        }
        if !(self.obs_noise >= 0.0) {
            return bad("obs_noise must be non-negative");
        }
        for (name, v) in [
            ("improve_prob", self.improve_prob),
            ("success_threshold", self.success_threshold),
            ("fail_prob", self.fail_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn is_success(&self, latent: f64) -> bool {
        latent >= self.success_threshold
    }
}

/// Read the hidden quality back out of a synthetic payload.
pub fn latent_of(payload: &str) -> Option<f64> {
    payload.strip_prefix("q=")?.parse().ok()
}

pub fn synth_generate<R: Rng + ?Sized>(
    req: &GenerationRequest,
    params: &LandscapeParams,
    rng: &mut R,
) -> GenerationResult {
    let q = match req.lineage.last() {
        None => Beta::new(params.root_a, params.root_b)
            .expect("validated root parameters")
            .sample(rng),
        Some(parent) => {
            let base = latent_of(&parent.payload).or(parent.score).unwrap_or(0.0);
            let sign = if rng.random::<f64>() < params.improve_prob {
                1.0
            } else {
                -1.0
            };
            let z: f64 = StandardNormal.sample(rng);
            (base + sign * params.refine_drift + params.refine_sd * z).clamp(0.0, 1.0)
        }
    };
    let z: f64 = StandardNormal.sample(rng);
    let observed = (q + params.obs_noise * z).clamp(0.0, 1.0);
    let failed = params.fail_prob > 0.0 && rng.random::<f64>() < params.fail_prob;
    GenerationResult {
        payload: format!("q={q}"),
        score: (!failed).then_some(observed),
        feedback: Some(if failed {
            "evaluation failed".to_string()
        } else {
            format!("observed {observed}")
        }),
        failed,
        latent: Some(q),
        failure: failed.then_some(FailureKind::Reported),
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticGenerator {
    params: LandscapeParams,
    label: String,
}

impl SyntheticGenerator {
    pub fn new(params: LandscapeParams) -> Result<Self> {
        params.validate()?;
        Ok(SyntheticGenerator {
            params,
            label: "synthetic".into(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn params(&self) -> &LandscapeParams {
        &self.params
    }
}

impl Generator for SyntheticGenerator {
    fn generate(&mut self, req: &GenerationRequest) -> Result<GenerationResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(req.stream);
        Ok(synth_generate(req, &self.params, &mut rng))
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::LineageRecord;

    fn parent(q: f64) -> Vec<LineageRecord> {
        vec![LineageRecord {
            payload: format!("q={q}"),
            score: Some(q),
            feedback: None,
        }]
    }

    #[test]
    fn noiseless_score_equals_latent() {
        let params = LandscapeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..1000 {
            let req = if i % 2 == 0 {
                GenerationRequest::direct("t", 0)
            } else {
                GenerationRequest::new("t", parent(0.4), 0)
            };
            let out = synth_generate(&req, &params, &mut rng);
            assert_eq!(out.score, out.latent);
            assert_eq!(latent_of(&out.payload), out.latent);
        }
    }

    #[test]
    fn uniform_root_has_mean_half() {
        // Uniform sd = 0.2887; SE over 1e5 draws = 9.13e-4, 3 SE = 2.74e-3.
        let params = LandscapeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| {
                synth_generate(&GenerationRequest::direct("t", 0), &params, &mut rng)
                    .score
                    .unwrap()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 2.74e-3, "{mean}");
    }

    #[test]
    fn deep_preset_drifts_upward() {
        // Unclamped drift is 0.9 * 0.15 - 0.1 * 0.15 = 0.12. Starting at 0.4
        // clamping never binds (0.4 +- 0.2 + 5 * 0.05 stays inside [0, 1]).
        let params = LandscapeParams::deep_favored();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let req = GenerationRequest::new("t", parent(0.4), 0);
        let mean = (0..n)
            .map(|_| synth_generate(&req, &params, &mut rng).latent.unwrap())
            .sum::<f64>()
            / n as f64;
        // Step sd = sqrt(0.05^2 + 0.15^2 - 0.12^2) = 0.103; 3 SE = 9.8e-4.
        assert!((mean - 0.52).abs() < 9.8e-4, "{mean}");
    }

    #[test]
    fn seeded_generator_is_pure() {
        let mut g = SyntheticGenerator::new(LandscapeParams::deep_favored()).unwrap();
        let req = GenerationRequest::new("t", parent(0.3), 77);
        assert_eq!(g.generate(&req).unwrap(), g.generate(&req).unwrap());
    }

    #[test]
    fn failures_drop_the_score() {
        let params = LandscapeParams {
            fail_prob: 1.0,
            ..LandscapeParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = synth_generate(&GenerationRequest::direct("t", 0), &params, &mut rng);
        assert!(out.failed && out.score.is_none() && out.latent.is_some());
    }

    #[test]
    fn bad_params_are_rejected() {
        let p = LandscapeParams {
            improve_prob: 1.5,
            ..LandscapeParams::default()
        };
        assert!(SyntheticGenerator::new(p).is_err());
    }
}
