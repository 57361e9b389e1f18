//! Next-step proposal: scripted finite-support policies for oracle-checkable
//! runs, and chat-completion backed policies for real agents.

mod remote;
mod scripted;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::trajectory::{TaskInstance, ToolCall, TrajStep, Trajectory};

pub use remote::{parse_completion, RemotePolicy, AGENT_SYSTEM_PROMPT};
pub use scripted::{state_signature, AgentProfile, AgentRule, ScriptedPolicy, WeightedStep};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateStep {
    pub reasoning: String,
    pub action: ToolCall,
    /// Per generated token, the log-probabilities of the top-10 alternatives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob_top10: Option<Vec<Vec<f64>>>,
    /// Set when a model completion had no usable tool call and was replaced
    /// by a no-op action.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flagged: bool,
}

impl CandidateStep {
    pub fn new(reasoning: impl Into<String>, action: ToolCall) -> Self {
        CandidateStep { reasoning: reasoning.into(), action, logprob_top10: None, flagged: false }
    }

    pub fn to_step(&self, step_index: usize) -> TrajStep {
        TrajStep::new(step_index, self.reasoning.clone(), self.action.clone())
    }

    /// `reasoning` followed by the rendered tool call.
    pub fn text(&self) -> String {
        format!("{} {}", self.reasoning, self.action)
    }
}

pub trait Policy: Send + Sync {
    fn id(&self) -> String;

    /// Draws `n` candidate next steps for the state reached by `prefix`.
    /// `context` is the rendered history shown to model-backed policies.
    fn propose(
        &self,
        task: &TaskInstance,
        prefix: &Trajectory,
        context: &str,
        n: usize,
        seed: u64,
    ) -> Result<Vec<CandidateStep>>;

    /// The enumerable form of this policy, if it has one.
    fn as_scripted(&self) -> Option<&ScriptedPolicy> {
        None
    }
}
