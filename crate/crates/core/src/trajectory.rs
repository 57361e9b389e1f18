//! Trajectory data model: tasks, tool calls, steps, and the ordered step
//! history an agent accumulates while answering a query.
//!
//! Records are line-delimited JSON with the field names
//! `{task_id, steps:[{t, reasoning, tool, args, response}], terminal_answer}`.
//! Tool responses are stored verbatim; nothing is truncated here.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::summary::Summary;

pub const TOOL_SEARCH: &str = "search";
pub const TOOL_OPEN: &str = "open";
pub const TOOL_ANSWER: &str = "answer";
/// Placeholder action for model outputs without a recognizable tool call.
pub const TOOL_NOOP: &str = "noop";

/// Version tag of the context render templates below.
pub const RENDER_TEMPLATE_VERSION: &str = "ctx-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: String,
    pub query: String,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_ref: Option<String>,
}

impl TaskInstance {
    pub fn validate(&self) -> Result<()> {
        if self.task_id.is_empty() {
            return Err(Error::schema("task_id", "must be non-empty"));
        }
        if self.gold_answer.trim().is_empty() {
            return Err(Error::schema("gold_answer", "must be non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    pub args: BTreeMap<String, String>,
}

impl ToolCall {
    pub fn new(tool: impl Into<String>, args: impl IntoIterator<Item = (String, String)>) -> Self {
        ToolCall { tool: tool.into(), args: args.into_iter().collect() }
    }

    pub fn search(query: impl Into<String>) -> Self {
        Self::new(TOOL_SEARCH, [("query".to_string(), query.into())])
    }

    pub fn open(page_id: impl Into<String>) -> Self {
        Self::new(TOOL_OPEN, [("page_id".to_string(), page_id.into())])
    }

    pub fn answer(value: impl Into<String>) -> Self {
        Self::new(TOOL_ANSWER, [("value".to_string(), value.into())])
    }

    pub fn noop() -> Self {
        Self::new(TOOL_NOOP, [])
    }

    pub fn is_answer(&self) -> bool {
        self.tool == TOOL_ANSWER
    }

    pub fn arg(&self, key: &str) -> Option<&str> {
        self.args.get(key).map(String::as_str)
    }

    /// The submitted value of an `answer` call.
    pub fn answer_value(&self) -> Option<&str> {
        if self.is_answer() {
            self.arg("value")
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tool.trim().is_empty() {
            return Err(Error::schema("tool", "tool name must be non-empty"));
        }
        if self.is_answer() && (self.args.len() != 1 || !self.args.contains_key("value")) {
            return Err(Error::schema("args", "`answer` takes exactly one argument named `value`"));
        }
        Ok(())
    }
}

impl fmt::Display for ToolCall {
    /// `name {"arg":"value",...}`, the same syntax remote models are asked to emit.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args = serde_json::to_string(&self.args).map_err(|_| fmt::Error)?;
        write!(f, "{} {}", self.tool, args)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajStep {
    pub step_index: usize,
    pub reasoning: String,
    pub action: ToolCall,
    /// Tool response; `None` until the step has been executed.
    pub response: Option<String>,
}

impl TrajStep {
    pub fn new(step_index: usize, reasoning: impl Into<String>, action: ToolCall) -> Self {
        TrajStep { step_index, reasoning: reasoning.into(), action, response: None }
    }

    pub fn with_response(mut self, response: impl Into<String>) -> Self {
        self.response = Some(response.into());
        self
    }

    pub fn is_executed(&self) -> bool {
        self.response.is_some()
    }

    fn render(&self, out: &mut String) {
        out.push_str(&format!("[Step {}]\n", self.step_index));
        out.push_str("Reasoning: ");
        out.push_str(&self.reasoning);
        out.push_str("\nAction: ");
        out.push_str(&self.action.to_string());
        out.push_str("\nResponse: ");
        out.push_str(self.response.as_deref().unwrap_or("(pending)"));
        out.push('\n');
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trajectory {
    pub task_id: String,
    steps: Vec<TrajStep>,
    terminal_answer: Option<String>,
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>) -> Self {
        Trajectory { task_id: task_id.into(), steps: Vec::new(), terminal_answer: None }
    }

    pub fn steps(&self) -> &[TrajStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn terminal_answer(&self) -> Option<&str> {
        self.terminal_answer.as_deref()
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal_answer.is_some()
    }

    pub fn last_response(&self) -> Option<&str> {
        self.steps.last().and_then(|s| s.response.as_deref())
    }

    /// The ordered list of tool calls, which together with the task id
    /// identifies a state of a deterministic world.
    pub fn actions(&self) -> impl Iterator<Item = &ToolCall> {
        self.steps.iter().map(|s| &s.action)
    }

    pub fn push(&mut self, step: TrajStep) -> Result<()> {
        if self.is_terminal() {
            return Err(Error::AfterTerminal);
        }
        if step.step_index != self.steps.len() + 1 {
            return Err(Error::IndexGap { len: self.steps.len(), got: step.step_index });
        }
        step.action.validate()?;
        if let Some(v) = step.action.answer_value() {
            self.terminal_answer = Some(v.to_string());
        }
        self.steps.push(step);
        Ok(())
    }

    pub(crate) fn pop(&mut self) -> Option<TrajStep> {
        let step = self.steps.pop()?;
        if step.action.is_answer() {
            self.terminal_answer = None;
        }
        Some(step)
    }

    pub fn append_step(&self, step: TrajStep) -> Result<Trajectory> {
        let mut next = self.clone();
        next.push(step)?;
        Ok(next)
    }

    /// The first `len` steps as a trajectory of their own.
    pub fn truncated(&self, len: usize) -> Trajectory {
        let mut t = Trajectory::new(self.task_id.clone());
        for s in self.steps.iter().take(len) {
            t.push(s.clone()).expect("prefix of a valid trajectory is valid");
        }
        t
    }

    pub fn to_record(&self) -> Value {
        let steps: Vec<Value> = self
            .steps
            .iter()
            .map(|s| {
                json!({
                    "t": s.step_index,
                    "reasoning": s.reasoning,
                    "tool": s.action.tool,
                    "args": s.action.args,
                    "response": s.response,
                })
            })
            .collect();
        json!({
            "task_id": self.task_id,
            "steps": steps,
            "terminal_answer": self.terminal_answer,
        })
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("trajectory record serializes")
    }

    pub fn from_line(line: &str) -> Result<Trajectory> {
        let v: Value = serde_json::from_str(line).map_err(|e| Error::schema("$", format!("malformed JSON: {e}")))?;
        Self::from_record(&v)
    }

    pub fn from_record(v: &Value) -> Result<Trajectory> {
        let obj = v.as_object().ok_or_else(|| Error::schema("$", "expected an object"))?;
        let task_id = req_str(obj, "task_id", "task_id")?;
        let steps = obj
            .get("steps")
            .ok_or_else(|| Error::schema("steps", "missing field"))?
            .as_array()
            .ok_or_else(|| Error::schema("steps", "expected an array"))?;
        let mut traj = Trajectory::new(task_id);
        for (i, sv) in steps.iter().enumerate() {
            let path = format!("steps[{i}]");
            let so = sv.as_object().ok_or_else(|| Error::schema(&path, "expected an object"))?;
            let t = so
                .get("t")
                .ok_or_else(|| Error::schema(format!("{path}.t"), "missing field"))?
                .as_u64()
                .ok_or_else(|| Error::schema(format!("{path}.t"), "expected a positive integer"))?
                as usize;
            if t == 0 {
                return Err(Error::schema(format!("{path}.t"), "step index must be >= 1"));
            }
            let reasoning = req_str(so, "reasoning", &format!("{path}.reasoning"))?;
            let tool = req_str(so, "tool", &format!("{path}.tool"))?;
            let args_v = so
                .get("args")
                .ok_or_else(|| Error::schema(format!("{path}.args"), "missing field"))?
                .as_object()
                .ok_or_else(|| Error::schema(format!("{path}.args"), "expected an object"))?;
            let mut args = BTreeMap::new();
            for (k, av) in args_v {
                let s = av.as_str().ok_or_else(|| Error::schema(format!("{path}.args.{k}"), "expected a string"))?;
                args.insert(k.clone(), s.to_string());
            }
            let response = match so.get("response") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(_) => return Err(Error::schema(format!("{path}.response"), "expected a string or null")),
            };
            let step = TrajStep { step_index: t, reasoning, action: ToolCall { tool, args }, response };
            traj.push(step).map_err(|e| match e {
                Error::SchemaViolation { path: p, reason } => Error::schema(format!("{path}.{p}"), reason),
                other => Error::schema(path.clone(), other.to_string()),
            })?;
        }
        let declared = match obj.get("terminal_answer") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err(Error::schema("terminal_answer", "expected a string or null")),
        };
        if declared != traj.terminal_answer {
            return Err(Error::schema("terminal_answer", "does not match the final `answer` step"));
        }
        Ok(traj)
    }
}

fn req_str(obj: &Map<String, Value>, key: &str, path: &str) -> Result<String> {
    obj.get(key)
        .ok_or_else(|| Error::schema(path, "missing field"))?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::schema(path, "expected a string"))
}

/// How much of the trajectory a scorer sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContextMode {
    Summary,
    LastK(usize),
    Full,
}

impl ContextMode {
    /// The rows of the context-representation ablation.
    pub const ABLATION_PRESETS: [ContextMode; 5] =
        [ContextMode::LastK(1), ContextMode::LastK(2), ContextMode::LastK(4), ContextMode::Full, ContextMode::Summary];
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextMode::Summary => f.write_str("summary"),
            ContextMode::Full => f.write_str("full"),
            ContextMode::LastK(k) => write!(f, "last{k}"),
        }
    }
}

impl FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "summary" => Ok(ContextMode::Summary),
            "full" => Ok(ContextMode::Full),
            _ => s
                .strip_prefix("last")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(ContextMode::LastK)
                .ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "unknown context mode `{s}` (expected summary, full or lastK with K >= 1)"
                    ))
                }),
        }
    }
}

impl Serialize for ContextMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ContextMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Serialize for Trajectory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_record().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Trajectory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Trajectory::from_record(&v).map_err(serde::de::Error::custom)
    }
}

const SUMMARY_HEADER: &str = "[Summary]\n";
const LATEST_HEADER: &str = "\n[Latest response]\n";
const NO_RESPONSE: &str = "(none)";

/// Fixed characters the summary template adds around the summary text and
/// the latest response.
pub const SUMMARY_TEMPLATE_OVERHEAD: usize =
    SUMMARY_HEADER.len() + LATEST_HEADER.len() + NO_RESPONSE.len() + 1 + crate::summary::EMPTY_SUMMARY_SENTINEL.len();

/// Renders the context block a scorer sees for the next step.
pub fn render_context(traj: &Trajectory, summary: Option<&Summary>, mode: ContextMode) -> Result<String> {
    let mut out = String::new();
    match mode {
        ContextMode::Full => traj.steps.iter().for_each(|s| s.render(&mut out)),
        ContextMode::LastK(k) => {
            let start = traj.steps.len().saturating_sub(k);
            traj.steps[start..].iter().for_each(|s| s.render(&mut out));
        }
        ContextMode::Summary => {
            let summary = summary.ok_or(Error::MissingSummary)?;
            out.push_str(SUMMARY_HEADER);
            out.push_str(summary.display_text());
            out.push_str(LATEST_HEADER);
            out.push_str(traj.last_response().unwrap_or(NO_RESPONSE));
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(t: usize, tool: ToolCall) -> TrajStep {
        TrajStep::new(t, format!("reasoning number {t}"), tool).with_response(format!("response {t}"))
    }

    fn three_steps() -> Trajectory {
        let mut tr = Trajectory::new("t1");
        tr.push(step(1, ToolCall::search("alpha"))).unwrap();
        tr.push(step(2, ToolCall::open("p001"))).unwrap();
        tr.push(step(3, ToolCall::search("beta"))).unwrap();
        tr
    }

    #[test]
    fn append_to_empty() {
        let tr = Trajectory::new("x");
        let next = tr.append_step(step(1, ToolCall::search("a"))).unwrap();
        assert_eq!(next.len(), 1);
        assert!(tr.is_empty());
    }

    #[test]
    fn append_rejects_gap() {
        let mut tr = Trajectory::new("x");
        tr.push(step(1, ToolCall::search("a"))).unwrap();
        tr.push(step(2, ToolCall::search("b"))).unwrap();
        let err = tr.append_step(step(4, ToolCall::search("c"))).unwrap_err();
        assert!(matches!(err, Error::IndexGap { len: 2, got: 4 }));
    }

    #[test]
    fn append_after_answer_fails() {
        let mut tr = Trajectory::new("x");
        tr.push(step(1, ToolCall::answer("42"))).unwrap();
        assert_eq!(tr.terminal_answer(), Some("42"));
        let err = tr.append_step(step(2, ToolCall::search("a"))).unwrap_err();
        assert!(matches!(err, Error::AfterTerminal));
    }

    #[test]
    fn answer_requires_single_value_arg() {
        let mut tr = Trajectory::new("x");
        let bad = ToolCall::new(TOOL_ANSWER, [("v".to_string(), "1".to_string())]);
        assert!(tr.push(TrajStep::new(1, "r", bad)).is_err());
    }

    #[test]
    fn render_last_two() {
        let ctx = render_context(&three_steps(), None, ContextMode::LastK(2)).unwrap();
        assert!(!ctx.contains("[Step 1]"));
        assert!(ctx.contains("[Step 2]") && ctx.contains("[Step 3]"));
        assert!(!ctx.contains("reasoning number 1"));
    }

    #[test]
    fn render_full_in_order() {
        let ctx = render_context(&three_steps(), None, ContextMode::Full).unwrap();
        let p: Vec<usize> = (1..=3).map(|i| ctx.find(&format!("[Step {i}]")).unwrap()).collect();
        assert!(p[0] < p[1] && p[1] < p[2]);
    }

    #[test]
    fn render_summary_mode() {
        let mut tr = Trajectory::new("t1");
        tr.push(step(1, ToolCall::search("alpha"))).unwrap();
        tr.push(step(2, ToolCall::open("p001"))).unwrap();
        let h = Summary::new("Question: who?\nFindings:\n- something".to_string(), 2);
        let ctx = render_context(&tr, Some(&h), ContextMode::Summary).unwrap();
        assert!(ctx.contains(h.text()));
        assert!(ctx.contains("response 2"));
        assert!(!ctx.contains("reasoning number 1"));
        assert!(matches!(render_context(&tr, None, ContextMode::Summary), Err(Error::MissingSummary)));
    }

    #[test]
    fn last_k_covering_everything_is_full() {
        let tr = three_steps();
        let full = render_context(&tr, None, ContextMode::Full).unwrap();
        for k in 3..8 {
            assert_eq!(render_context(&tr, None, ContextMode::LastK(k)).unwrap(), full);
        }
    }

    #[test]
    fn context_mode_strings() {
        for m in ContextMode::ABLATION_PRESETS {
            assert_eq!(m.to_string().parse::<ContextMode>().unwrap(), m);
        }
        assert!("last0".parse::<ContextMode>().is_err());
        assert!("recent".parse::<ContextMode>().is_err());
    }

    #[test]
    fn record_missing_steps() {
        let err = Trajectory::from_line(r#"{"task_id":"a","terminal_answer":null}"#).unwrap_err();
        match err {
            Error::SchemaViolation { path, .. } => assert_eq!(path, "steps"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn record_rejects_string_or_zero_index() {
        for t in [r#""0""#, "0"] {
            let line = format!(
                r#"{{"task_id":"a","steps":[{{"t":{t},"reasoning":"r","tool":"search","args":{{"query":"q"}},"response":null}}],"terminal_answer":null}}"#
            );
            match Trajectory::from_line(&line).unwrap_err() {
                Error::SchemaViolation { path, .. } => assert_eq!(path, "steps[0].t"),
                e => panic!("unexpected {e:?}"),
            }
        }
    }

    #[test]
    fn record_rejects_inconsistent_terminal_answer() {
        let line = r#"{"task_id":"a","steps":[{"t":1,"reasoning":"r","tool":"answer","args":{"value":"x"},"response":"x"}],"terminal_answer":"y"}"#;
        assert!(Trajectory::from_line(line).is_err());
    }

    #[test]
    fn record_field_names() {
        let v = three_steps().to_record();
        let step0 = &v["steps"][0];
        for k in ["t", "reasoning", "tool", "args", "response"] {
            assert!(step0.get(k).is_some(), "missing {k}");
        }
        assert!(v.get("terminal_answer").is_some());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_call() -> impl Strategy<Value = ToolCall> {
            prop_oneof![
                "[a-z ]{0,12}".prop_map(ToolCall::search),
                "p[0-9]{3}".prop_map(ToolCall::open),
                Just(ToolCall::noop()),
            ]
        }

        prop_compose! {
            fn arb_traj()(calls in prop::collection::vec((arb_call(), ".{0,20}", proptest::option::of(".{0,40}")), 0..8),
                          answer in proptest::option::of("\\PC{0,10}"))
                          -> Trajectory {
                let mut tr = Trajectory::new("task-p");
                for (i, (c, r, o)) in calls.into_iter().enumerate() {
                    let mut s = TrajStep::new(i + 1, r, c);
                    s.response = o;
                    tr.push(s).unwrap();
                }
                if let Some(a) = answer {
                    let t = tr.len() + 1;
                    tr.push(TrajStep::new(t, "final", ToolCall::answer(a.clone())).with_response(a)).unwrap();
                }
                tr
            }
        }

        proptest! {
            #[test]
            fn round_trip(tr in arb_traj()) {
                prop_assert_eq!(Trajectory::from_line(&tr.to_line()).unwrap(), tr);
            }

            #[test]
            fn full_render_grows(tr in arb_traj()) {
                let mut prev = 0;
                for len in 0..=tr.len() {
                    let n = render_context(&tr.truncated(len), None, ContextMode::Full).unwrap().len();
                    prop_assert!(n >= prev);
                    prev = n;
                }
            }
        }
    }
}
