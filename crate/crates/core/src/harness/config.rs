use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::external::ExternalGenerator;
use crate::generator::Generator;
use crate::policy::PolicyConfig;
use crate::synth::{LandscapeParams, SyntheticGenerator};

/// Where answers come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeneratorSpec {
    Synthetic {
        #[serde(default)]
        label: Option<String>,
        /// `deep-favored`, `wide-favored` or `uniform`.
        #[serde(default)]
        preset: Option<String>,
        /// Field overrides applied on top of the preset.
        #[serde(default)]
        params: Option<toml::Table>,
    },
    External {
        #[serde(default)]
        label: Option<String>,
        command: Vec<String>,
        #[serde(default)]
        timeout_secs: Option<f64>,
    },
}

impl GeneratorSpec {
    pub fn synthetic(preset: &str) -> Self {
        GeneratorSpec::Synthetic {
            label: None,
            preset: Some(preset.into()),
            params: None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            GeneratorSpec::Synthetic { label, preset, .. } => label
                .clone()
                .or_else(|| preset.clone())
                .unwrap_or_else(|| "synthetic".into()),
            GeneratorSpec::External { label, command, .. } => label
                .clone()
                .or_else(|| command.first().cloned())
                .unwrap_or_else(|| "external".into()),
        }
    }

    /// Landscape of a synthetic generator; `None` for external ones.
    pub fn landscape(&self) -> Result<Option<LandscapeParams>> {
        let GeneratorSpec::Synthetic { preset, params, .. } = self else {
            return Ok(None);
        };
        let base = match preset.as_deref() {
            None => LandscapeParams::default(),
            Some(name) => LandscapeParams::preset(name)
                .ok_or_else(|| Error::Config(format!("unknown landscape preset `{name}`")))?,
        };
        let merged = match params {
            None => base,
            Some(overrides) => {
                let mut table = toml::Table::try_from(base)
                    .map_err(|e| Error::Config(format!("landscape: {e}")))?;
                for (k, v) in overrides {
                    if !table.contains_key(k) {
                        return Err(Error::Config(format!("unknown landscape field `{k}`")));
                    }
                    table.insert(k.clone(), v.clone());
                }
                table
                    .try_into()
                    .map_err(|e| Error::Config(format!("landscape: {e}")))?
            }
        };
        merged.validate()?;
        Ok(Some(merged))
    }

    pub fn build(&self) -> Result<Box<dyn Generator>> {
        match self {
            GeneratorSpec::Synthetic { .. } => {
                let params = self.landscape()?.expect("synthetic spec has a landscape");
                Ok(Box::new(
                    SyntheticGenerator::new(params)?.with_label(self.label()),
                ))
            }
            GeneratorSpec::External {
                command,
                timeout_secs,
                ..
            } => {
                let mut g = ExternalGenerator::new(command.clone()).with_label(self.label());
                if let Some(t) = timeout_secs {
                    g = g.with_timeout(Duration::from_secs_f64(*t));
                }
                Ok(Box::new(g))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            GeneratorSpec::Synthetic { .. } => self.landscape().map(|_| ()),
            GeneratorSpec::External {
                command,
                timeout_secs,
                ..
            } => {
                if command.is_empty() {
                    return Err(Error::Config("external generator needs a command".into()));
                }
                if let Some(t) = timeout_secs {
                    if !(*t > 0.0 && t.is_finite()) {
                        return Err(Error::Config("timeout_secs must be positive".into()));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Prior-sensitivity grid: one experiment per value of `field`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub field: String,
    pub values: Vec<f64>,
}

fn default_budgets() -> Vec<usize> {
    (0..=7).map(|e| 1usize << e).collect()
}
fn default_seeds() -> usize {
    10
}
fn default_batch() -> usize {
    1
}
fn default_pass_k() -> Vec<usize> {
    vec![1, 2]
}
fn default_task() -> String {
    "task".into()
}
fn default_generators() -> Vec<GeneratorSpec> {
    vec![GeneratorSpec::synthetic("deep-favored")]
}

/// A policy × budget × seed sweep over one set of generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub policies: Vec<PolicyConfig>,
    /// Checkpoints read off each run; the largest is the run length.
    #[serde(default = "default_budgets")]
    pub budgets: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_pass_k")]
    pub pass_k: Vec<usize>,
    #[serde(default = "default_task")]
    pub task: String,
    /// One entry per generator; every policy runs with all of them.
    #[serde(default = "default_generators")]
    pub generators: Vec<GeneratorSpec>,
    /// Worker threads; 0 picks the available parallelism.
    #[serde(default)]
    pub threads: usize,
    /// Record file (one JSON object per line).
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
}

impl ExperimentConfig {
    pub fn new(policies: Vec<PolicyConfig>, budgets: Vec<usize>, seeds: usize) -> Self {
        ExperimentConfig {
            name: None,
            policies,
            budgets,
            seeds,
            root_seed: 0,
            batch: 1,
            pass_k: default_pass_k(),
            task: default_task(),
            generators: default_generators(),
            threads: 0,
            out: None,
            sweep: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file. A relative `out` path resolves against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(out), Some(dir)) = (&cfg.out, path.parent()) {
            if out.is_relative() {
                cfg.out = Some(dir.join(out));
            }
        }
        Ok(cfg)
    }

    /// Give every policy the experiment's generator count.
    pub fn normalize(&mut self) {
        let n = self.generators.len().max(1);
        for p in &mut self.policies {
            p.generators = n;
        }
    }

    pub fn max_budget(&self) -> usize {
        self.budgets.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.policies.is_empty() {
            return bad("at least one policy is required");
        }
        if self.budgets.is_empty() || self.budgets[0] == 0 {
            return bad("budgets must be non-empty and positive");
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return bad("budgets must be strictly ascending");
        }
        if self.seeds == 0 {
            return bad("seeds must be at least 1");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.pass_k.contains(&0) {
            return bad("pass_k entries must be at least 1");
        }
        if self.generators.is_empty() {
            return bad("at least one generator is required");
        }
        for g in &self.generators {
            g.validate()?;
        }
        let mut labels = std::collections::HashSet::new();
        for p in &self.policies {
            if p.generators != self.generators.len() {
                return Err(Error::Config(format!(
                    "policy {} expects {} generators, experiment has {}",
                    p.label(),
                    p.generators,
                    self.generators.len()
                )));
            }
            p.validate()?;
            if !labels.insert(p.label()) {
                return Err(Error::Config(format!(
                    "duplicate policy name `{}`; set `name` to tell them apart",
                    p.label()
                )));
            }
        }
        if let Some(grid) = &self.sweep {
            grid.check(&self.policies)?;
        }
        Ok(())
    }
}

impl SweepGrid {
    pub(crate) fn check(&self, policies: &[PolicyConfig]) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        for p in policies {
            for v in &self.values {
                p.clone().set_prior(&self.field, *v)?;
            }
        }
        Ok(())
    }
}
