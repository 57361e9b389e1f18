use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::Value;

use super::{CandidateStep, Policy};
use crate::backend::{ChatBackend, ChatMessage, ChatRequest};
use crate::error::{Error, Result};
use crate::seed;
use crate::trajectory::{TaskInstance, ToolCall, Trajectory};

pub const AGENT_SYSTEM_PROMPT: &str = "\
You are a research agent answering a question with tools.
Tools:
  search {\"query\": <keyword>}   list pages indexed under a keyword
  open {\"page_id\": <id>}        read a page
  answer {\"value\": <text>}      submit the final answer
Think step by step, then end your reply with exactly one line of the form
TOOL: <name> {<JSON arguments>}";

/// Splits a completion into reasoning and tool call. A completion without a
/// well-formed `TOOL:` line becomes a flagged no-op that keeps the text as
/// its reasoning.
pub fn parse_completion(text: &str) -> CandidateStep {
    let lines: Vec<&str> = text.lines().collect();
    let found =
        lines.iter().enumerate().rev().find_map(|(i, l)| l.trim().strip_prefix("TOOL:").map(|rest| (i, rest.trim())));
    let flagged = || CandidateStep { flagged: true, ..CandidateStep::new(text.trim(), ToolCall::noop()) };
    let Some((at, rest)) = found else { return flagged() };
    let (name, args_text) = match rest.find(char::is_whitespace) {
        Some(sp) => (&rest[..sp], rest[sp..].trim()),
        None => (rest, ""),
    };
    let args_text = args_text.trim_end_matches('`').trim();
    let mut args = BTreeMap::new();
    if !args_text.is_empty() {
        match serde_json::from_str::<Value>(args_text) {
            Ok(Value::Object(map)) => {
                for (k, v) in map {
                    let s = match v {
                        Value::String(s) => s,
                        other => other.to_string(),
                    };
                    args.insert(k, s);
                }
            }
            _ => return flagged(),
        }
    }
    let action = ToolCall { tool: name.to_string(), args };
    if name.is_empty() || action.validate().is_err() {
        return flagged();
    }
    let reasoning =
        lines[..at].iter().filter(|l| !l.trim_start().starts_with("```")).copied().collect::<Vec<_>>().join("\n");
    CandidateStep::new(reasoning.trim(), action)
}

/// Samples next steps from a chat-completion model.
pub struct RemotePolicy {
    backend: Arc<dyn ChatBackend>,
    top_logprobs: Option<u8>,
    label: String,
}

impl RemotePolicy {
    pub fn new(backend: Arc<dyn ChatBackend>, label: impl Into<String>) -> Self {
        RemotePolicy { backend, top_logprobs: None, label: label.into() }
    }

    /// Also request per-token top-k log-probabilities (k = 10 for the
    /// confidence baseline).
    pub fn with_top_logprobs(mut self, k: u8) -> Self {
        self.top_logprobs = Some(k);
        self
    }
}

impl Policy for RemotePolicy {
    fn id(&self) -> String {
        format!("remote:{}", self.label)
    }

    fn propose(
        &self,
        task: &TaskInstance,
        prefix: &Trajectory,
        context: &str,
        n: usize,
        seed: u64,
    ) -> Result<Vec<CandidateStep>> {
        if n == 0 {
            return Err(Error::InvalidConfig("n must be >= 1".into()));
        }
        let user = format!(
            "Question: {}\n\nHistory:\n{}\nGive your next step.",
            task.query,
            if context.is_empty() { "(no steps yet)\n" } else { context }
        );
        let messages = vec![ChatMessage::system(AGENT_SYSTEM_PROMPT), ChatMessage::user(user)];
        let t = prefix.len() as u64 + 1;
        let mut out = Vec::with_capacity(n);
        let mut round = 0u64;
        while out.len() < n {
            let mut req = ChatRequest::new(messages.clone()).with_n(n - out.len()).with_seed(seed::sub_seed(
                seed,
                &task.task_id,
                t,
                round,
            ));
            if let Some(k) = self.top_logprobs {
                req = req.with_top_logprobs(k);
            }
            let choices = self.backend.complete(&req)?;
            if choices.is_empty() {
                return Err(Error::BackendUnavailable { attempts: 1, reason: "backend returned no choices".into() });
            }
            for c in choices.into_iter().take(n - out.len()) {
                let mut step = parse_completion(&c.content);
                step.logprob_top10 = c.logprobs;
                out.push(step);
            }
            round += 1;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::TOOL_NOOP;

    #[test]
    fn parses_trailing_tool_line() {
        let c = parse_completion("I should look this up.\nTOOL: search {\"query\": \"Kalo\"}");
        assert!(!c.flagged);
        assert_eq!(c.reasoning, "I should look this up.");
        assert_eq!(c.action, ToolCall::search("Kalo"));
    }

    #[test]
    fn parses_fenced_block_and_uses_last_line() {
        let text = "Plan: TOOL: is mentioned here.\n```\nTOOL: open {\"page_id\": \"p003\"}\n```";
        let c = parse_completion(text);
        assert_eq!(c.action, ToolCall::open("p003"));
        assert!(!c.flagged);
    }

    #[test]
    fn non_string_arguments_are_stringified() {
        let c = parse_completion("TOOL: answer {\"value\": 42}");
        assert_eq!(c.action, ToolCall::answer("42"));
    }

    #[test]
    fn malformed_completions_become_flagged_noops() {
        for text in ["I think the answer is 42.", "TOOL: search {not json}", "TOOL: answer {\"v\": \"x\"}", "TOOL:"] {
            let c = parse_completion(text);
            assert!(c.flagged, "{text}");
            assert_eq!(c.action.tool, TOOL_NOOP);
            assert_eq!(c.reasoning, text.trim());
        }
    }
}
