//! Run configuration. Values resolve as defaults, then a config file, then
//! command-line flags; the resolved document is embedded in every manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annotate::DEFAULT_STEPWISE_THRESHOLD;
use crate::backend::BackendConfig;
use crate::error::{Error, Result};
use crate::eval::{PolicyKind, DEFAULT_N_SWEEP};
use crate::io::MANIFEST_SCHEMA;
use crate::scorer::ScorerKind;
use crate::summary::DEFAULT_SUMMARY_BOUND;
use crate::trajectory::ContextMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummarizerKind {
    Extractive,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    Exact,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Rollouts per mean-accuracy estimate.
    #[serde(rename = "M")]
    pub m_rollouts: usize,
    /// Scorer generations per side in a reward group.
    #[serde(rename = "N")]
    pub group_size: usize,
    /// Candidates per search step.
    pub n: usize,
    /// Summary length bound in characters.
    #[serde(rename = "L")]
    pub summary_bound: usize,
    /// Search step budget; unset uses each world's default.
    pub max_steps: Option<usize>,
    /// Rollout step budget during annotation; unset uses each world's default.
    pub rollout_budget: Option<usize>,
    pub max_pairs: usize,
    /// Worker threads; 0 means one per core.
    pub workers: usize,
    pub guess_prob: f64,
    pub scorer: ScorerKind,
    pub context_mode: ContextMode,
    pub policy: PolicyKind,
    pub summarizer: SummarizerKind,
    pub judge: JudgeKind,
    pub stepwise_threshold: f64,
    pub n_values: Vec<usize>,
    pub context_modes: Vec<ContextMode>,
    /// Overrides the suite's runs per task.
    pub runs_per_task: Option<usize>,
    pub with_advantages: bool,
    pub backend: Option<BackendConfig>,

    pub hops: usize,
    pub branching: usize,
    pub entities: Option<usize>,
    pub noise_pages: Option<usize>,
    pub count: usize,

    pub tasks: Option<PathBuf>,
    pub suite: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            m_rollouts: 8,
            group_size: 4,
            n: 4,
            summary_bound: DEFAULT_SUMMARY_BOUND,
            max_steps: None,
            rollout_budget: None,
            max_pairs: 16,
            workers: 0,
            guess_prob: 0.1,
            scorer: ScorerKind::Oracle,
            context_mode: ContextMode::Summary,
            policy: PolicyKind::Scripted,
            summarizer: SummarizerKind::Extractive,
            judge: JudgeKind::Exact,
            stepwise_threshold: DEFAULT_STEPWISE_THRESHOLD,
            n_values: DEFAULT_N_SWEEP.to_vec(),
            context_modes: ContextMode::ABLATION_PRESETS.to_vec(),
            runs_per_task: None,
            with_advantages: false,
            backend: None,
            hops: 2,
            branching: 2,
            entities: None,
            noise_pages: None,
            count: 1,
            tasks: None,
            suite: None,
            pairs: None,
            predictions: None,
            trajectories: None,
            out: None,
        }
    }
}

impl RunConfig {
    /// Reads a TOML or JSON config. A run manifest is accepted too, in which
    /// case its embedded configuration is used.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        let value: Value = if is_toml {
            let t: toml::Value =
                toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
            serde_json::to_value(t)?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        };
        let value = match value.get("schema").and_then(Value::as_str) {
            Some(MANIFEST_SCHEMA) => value.get("config").cloned().unwrap_or(Value::Null),
            _ => value,
        };
        serde_json::from_value(value).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("M", self.m_rollouts),
            ("N", self.group_size),
            ("n", self.n),
            ("L", self.summary_bound),
            ("max_pairs", self.max_pairs),
            ("hops", self.hops),
            ("branching", self.branching),
            ("count", self.count),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.max_steps == Some(0) || self.rollout_budget == Some(0) {
            return Err(Error::InvalidConfig("step budgets must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.guess_prob) {
            return Err(Error::InvalidConfig("guess_prob must lie in [0, 1]".into()));
        }
        if self.n_values.contains(&0) {
            return Err(Error::InvalidConfig("n_values must be >= 1".into()));
        }
        if let Some(b) = &self.backend {
            b.validate()?;
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        field.as_deref().ok_or_else(|| Error::InvalidConfig(format!("missing required path `{name}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_hold_standard_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!((c.m_rollouts, c.group_size, c.n, c.summary_bound), (8, 4, 4, 2000));
        assert_eq!(c.n_values, vec![1, 2, 4, 8, 16]);
        c.validate().unwrap();
    }

    #[test]
    fn file_formats_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        fs::write(&t, "M = 16\nscorer = \"relevance\"\ncontext_mode = \"last2\"\n").unwrap();
        let c = RunConfig::load(&t).unwrap();
        assert_eq!(c.m_rollouts, 16);
        assert_eq!(c.scorer, ScorerKind::Relevance);
        assert_eq!(c.context_mode, ContextMode::LastK(2));
        let m = crate::io::Manifest::new("x", c.to_value());
        let mp = dir.path().join("m.json");
        fs::write(&mp, serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(RunConfig::load(&mp).unwrap(), c);
        let bad = dir.path().join("b.json");
        fs::write(&bad, "{\"nonsense\": 1}").unwrap();
        assert!(RunConfig::load(&bad).is_err());
    }

    #[test]
    fn rejects_zero_values() {
        let c = RunConfig { n: 0, ..RunConfig::default() };
        assert!(c.validate().is_err());
    }
}
