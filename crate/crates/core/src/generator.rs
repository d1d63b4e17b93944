//! Black-box answer generators: lineage context in, scored answer out.

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// An ancestor answer handed to the generator for refinement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineageRecord {
    pub payload: String,
    pub score: Option<f64>,
    #[serde(default)]
    pub feedback: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    Direct,
    Refine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub task: String,
    pub mode: GenerationMode,
    /// Root-to-parent ancestor answers; empty for direct generation.
    pub lineage: Vec<LineageRecord>,
    /// Seed for the generator's own randomness on this call.
    pub stream: u64,
}

impl GenerationRequest {
    pub fn new(task: impl Into<String>, lineage: Vec<LineageRecord>, stream: u64) -> Self {
        let mode = if lineage.is_empty() {
            GenerationMode::Direct
        } else {
            GenerationMode::Refine
        };
        GenerationRequest {
            task: task.into(),
            mode,
            lineage,
            stream,
        }
    }

    pub fn direct(task: impl Into<String>, stream: u64) -> Self {
        Self::new(task, Vec::new(), stream)
    }
}

/// Why a generation produced no score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    /// The generator itself reported a failed answer.
    Reported,
    Timeout,
    /// The response violated the wire protocol.
    Malformed,
    /// The generator process died mid-request.
    Crashed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub payload: String,
    pub score: Option<f64>,
    pub feedback: Option<String>,
    pub failed: bool,
    /// Hidden true quality; only synthetic generators know it.
    pub latent: Option<f64>,
    pub failure: Option<FailureKind>,
}

impl GenerationResult {
    pub fn scored(payload: impl Into<String>, score: f64) -> Self {
        GenerationResult {
            payload: payload.into(),
            score: Some(score),
            feedback: None,
            failed: false,
            latent: None,
            failure: None,
        }
    }

    pub fn failure(kind: FailureKind, detail: impl Into<String>) -> Self {
        GenerationResult {
            payload: String::new(),
            score: None,
            feedback: Some(detail.into()),
            failed: true,
            latent: None,
            failure: Some(kind),
        }
    }
}

/// An answer generator paired with its score evaluator.
///
/// `Err` means the generator is permanently unavailable and the search
/// should stop; everything recoverable is reported as a failed result.
pub trait Generator: Send {
    fn generate(&mut self, req: &GenerationRequest) -> Result<GenerationResult>;

    /// Serve several independent requests. The default runs them in order.
    fn generate_batch(&mut self, reqs: &[GenerationRequest]) -> Result<Vec<GenerationResult>> {
        reqs.iter().map(|r| self.generate(r)).collect()
    }

    fn label(&self) -> String {
        "generator".into()
    }
}

/// Replays a fixed list of scores in order, cycling when exhausted.
/// Useful for scripted walkthroughs and tests.
#[derive(Clone, Debug)]
pub struct ScriptedGenerator {
    scores: Vec<Option<f64>>,
    next: usize,
}

impl ScriptedGenerator {
    pub fn new(scores: Vec<Option<f64>>) -> Self {
        assert!(!scores.is_empty(), "script needs at least one entry");
        ScriptedGenerator { scores, next: 0 }
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&mut self, req: &GenerationRequest) -> Result<GenerationResult> {
        let score = self.scores[self.next % self.scores.len()];
        self.next += 1;
        let payload = format!("answer-{}-depth{}", self.next, req.lineage.len());
        Ok(match score {
            Some(s) => GenerationResult::scored(payload, s),
            None => GenerationResult {
                payload,
                ..GenerationResult::failure(FailureKind::Reported, "scripted failure")
            },
        })
    }

    fn label(&self) -> String {
        "scripted".into()
    }
}
