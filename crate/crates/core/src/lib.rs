//! Adaptive-branching Monte Carlo tree search.
//!
//! Each search node decides, by Thompson sampling over Bayesian score
//! posteriors, whether to generate a fresh answer (go wider) or to refine an
//! existing child (go deeper).

pub mod error;
pub mod export;
pub mod external;
pub mod generator;
pub mod harness;
pub mod metrics;
pub mod mixed_model;
pub mod multigen;
pub mod policy;
pub mod posterior;
pub mod seed;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
