//! Recursive trajectory summaries.
//!
//! A summary `h_t` is computed from exactly five inputs: the query, the
//! previous summary `h_{t-1}`, the previous tool response `o_{t-1}`, and the
//! current reasoning and action. Older raw steps are never consulted, so the
//! summary length stays bounded however long the trajectory grows.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{ChatBackend, ChatMessage, ChatRequest};
use crate::error::{Error, Result};
use crate::trajectory::{TrajStep, Trajectory};

pub const DEFAULT_SUMMARY_BOUND: usize = 2000;
/// Rendering of the empty base-case summary `h_0`.
pub const EMPTY_SUMMARY_SENTINEL: &str = "(no prior summary)";
const NO_RESPONSE: &str = "(no tool response yet)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SummaryRecord", into = "SummaryRecord")]
pub struct Summary {
    text: String,
    step_index: usize,
}

#[derive(Serialize, Deserialize)]
struct SummaryRecord {
    text: String,
    char_len: usize,
    step_index: usize,
}

impl TryFrom<SummaryRecord> for Summary {
    type Error = String;

    fn try_from(r: SummaryRecord) -> std::result::Result<Self, String> {
        if r.text.chars().count() != r.char_len {
            return Err("char_len does not match text".into());
        }
        Ok(Summary { text: r.text, step_index: r.step_index })
    }
}

impl From<Summary> for SummaryRecord {
    fn from(s: Summary) -> Self {
        SummaryRecord { char_len: s.char_len(), text: s.text, step_index: s.step_index }
    }
}

impl Summary {
    pub fn new(text: String, step_index: usize) -> Self {
        Summary { text, step_index }
    }

    /// `h_0`.
    pub fn empty() -> Self {
        Summary { text: String::new(), step_index: 0 }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// The text, or the base-case sentinel for `h_0`.
    pub fn display_text(&self) -> &str {
        if self.text.is_empty() {
            EMPTY_SUMMARY_SENTINEL
        } else {
            &self.text
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }
}

pub trait Summarizer: Send + Sync {
    fn id(&self) -> String;

    /// `h_t` from `(q, h_{t-1}, o_{t-1}, s_t, a_t)`.
    fn update(&self, query: &str, prev: &Summary, prev_response: Option<&str>, step: &TrajStep) -> Result<Summary>;
}

fn check_order(prev: &Summary, step: &TrajStep) -> Result<()> {
    if prev.step_index + 1 != step.step_index {
        return Err(Error::SummaryOutOfOrder { have: prev.step_index, got: step.step_index });
    }
    Ok(())
}

fn truncate_chars(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "have", "i", "in", "is", "it", "its", "no",
    "not", "of", "on", "or", "so", "that", "the", "this", "to", "was", "what", "which", "who", "will", "with",
];

fn content_tokens(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut cur = String::new();
        let mut chars = line.chars().peekable();
        while let Some(c) = chars.next() {
            cur.push(c);
            if matches!(c, '.' | '?' | '!') && chars.peek().is_none_or(|n| n.is_whitespace()) {
                let s = cur.trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                cur.clear();
            }
        }
        let s = cur.trim();
        if !s.is_empty() {
            out.push(s.to_string());
        }
    }
    out
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Deterministic extractive summarizer. The summary keeps three sections:
/// the question verbatim, findings (sentences of tool responses sharing a
/// content token with the question or with an already retained finding) and
/// the plan (last sentence of the latest reasoning). Oldest findings are
/// evicted first when the text would exceed the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractiveSummarizer {
    pub bound: usize,
}

impl Default for ExtractiveSummarizer {
    fn default() -> Self {
        ExtractiveSummarizer { bound: DEFAULT_SUMMARY_BOUND }
    }
}

fn parse_findings(text: &str) -> Vec<String> {
    let mut in_findings = false;
    let mut out = Vec::new();
    for line in text.lines() {
        if line == "Findings:" {
            in_findings = true;
        } else if line.starts_with("Plan:") {
            in_findings = false;
        } else if in_findings {
            if let Some(f) = line.strip_prefix("- ") {
                out.push(f.to_string());
            }
        }
    }
    out
}

fn render_sections(question: &str, findings: &[String], plan: &str) -> String {
    let mut s = format!("Question: {question}\nFindings:\n");
    if findings.is_empty() {
        s.push_str("(none)\n");
    }
    for f in findings {
        s.push_str("- ");
        s.push_str(f);
        s.push('\n');
    }
    s.push_str("Plan: ");
    s.push_str(plan);
    s
}

impl ExtractiveSummarizer {
    pub fn new(bound: usize) -> Self {
        ExtractiveSummarizer { bound }
    }
}

impl Summarizer for ExtractiveSummarizer {
    fn id(&self) -> String {
        format!("extractive(L={})", self.bound)
    }

    fn update(&self, query: &str, prev: &Summary, prev_response: Option<&str>, step: &TrajStep) -> Result<Summary> {
        check_order(prev, step)?;
        let question = single_line(query);
        let mut findings = parse_findings(&prev.text);
        let mut anchors = content_tokens(&question);
        for f in &findings {
            anchors.extend(content_tokens(f));
        }
        if let Some(resp) = prev_response {
            for sentence in sentences(resp) {
                let toks = content_tokens(&sentence);
                if findings.contains(&sentence) || toks.is_disjoint(&anchors) {
                    continue;
                }
                anchors.extend(toks);
                findings.push(sentence);
            }
        }
        let plan = sentences(&step.reasoning).pop().unwrap_or_default();

        let mut text = render_sections(&question, &findings, &plan);
        while text.chars().count() > self.bound && !findings.is_empty() {
            findings.remove(0);
            text = render_sections(&question, &findings, &plan);
        }
        if text.chars().count() > self.bound {
            let fixed = render_sections(&question, &[], "").chars().count();
            let room = self.bound.saturating_sub(fixed);
            text = render_sections(&question, &[], &truncate_chars(&plan, room));
        }
        Ok(Summary::new(truncate_chars(&text, self.bound), step.step_index))
    }
}

const SFT_Q: &str = "[[QUESTION]]\n";
const SFT_H: &str = "\n[[PREVIOUS SUMMARY]]\n";
const SFT_O: &str = "\n[[LATEST TOOL RESPONSE]]\n";
const SFT_S: &str = "\n[[CURRENT REASONING]]\n";
const SFT_A: &str = "\n[[CURRENT ACTION]]\n";

/// The five summarizer inputs rendered as one prompt.
pub fn render_summary_input(query: &str, prev: &Summary, prev_response: Option<&str>, step: &TrajStep) -> String {
    format!(
        "{SFT_Q}{query}{SFT_H}{}{SFT_O}{}{SFT_S}{}{SFT_A}{}",
        prev.display_text(),
        prev_response.unwrap_or(NO_RESPONSE),
        step.reasoning,
        step.action,
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryInputs {
    pub query: String,
    pub prev_summary: String,
    pub prev_response: Option<String>,
    pub reasoning: String,
    pub action: String,
}

/// Inverse of [`render_summary_input`]. The empty summary comes back as "".
pub fn parse_summary_input(input: &str) -> Result<SummaryInputs> {
    let bad = |what: &str| Error::schema("input_context", format!("missing {what} section"));
    let rest = input.strip_prefix(SFT_Q).ok_or_else(|| bad("question"))?;
    let (query, rest) = rest.split_once(SFT_H).ok_or_else(|| bad("previous summary"))?;
    let (h, rest) = rest.split_once(SFT_O).ok_or_else(|| bad("tool response"))?;
    let (o, rest) = rest.split_once(SFT_S).ok_or_else(|| bad("reasoning"))?;
    let (s, a) = rest.rsplit_once(SFT_A).ok_or_else(|| bad("action"))?;
    Ok(SummaryInputs {
        query: query.to_string(),
        prev_summary: if h == EMPTY_SUMMARY_SENTINEL { String::new() } else { h.to_string() },
        prev_response: (o != NO_RESPONSE).then(|| o.to_string()),
        reasoning: s.to_string(),
        action: a.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub input_context: String,
    pub target_summary: String,
}

pub fn emit_sft_record(
    query: &str,
    prev: &Summary,
    prev_response: Option<&str>,
    step: &TrajStep,
    target: &Summary,
) -> SftRecord {
    SftRecord {
        input_context: render_summary_input(query, prev, prev_response, step),
        target_summary: target.text.clone(),
    }
}

/// Summarizer backed by a chat model; output is cut to the bound.
pub struct RemoteSummarizer {
    backend: Arc<dyn ChatBackend>,
    bound: usize,
}

impl RemoteSummarizer {
    pub fn new(backend: Arc<dyn ChatBackend>, bound: usize) -> Self {
        RemoteSummarizer { backend, bound }
    }
}

const SUMMARIZER_PROMPT: &str = "Update the running summary of an information-seeking trajectory. \
Keep only what is needed to judge the next step: confirmed findings and the current plan. \
Reply with the new summary only.";

impl Summarizer for RemoteSummarizer {
    fn id(&self) -> String {
        format!("remote(L={})", self.bound)
    }

    fn update(&self, query: &str, prev: &Summary, prev_response: Option<&str>, step: &TrajStep) -> Result<Summary> {
        check_order(prev, step)?;
        let req = ChatRequest::new(vec![
            ChatMessage::system(SUMMARIZER_PROMPT),
            ChatMessage::user(render_summary_input(query, prev, prev_response, step)),
        ])
        .with_temperature(0.0);
        let choice = self
            .backend
            .complete(&req)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::ParseFailure("summarizer returned no choices".into()))?;
        Ok(Summary::new(truncate_chars(choice.content.trim(), self.bound), step.step_index))
    }
}

/// Summaries `h_1..h_T` of a trajectory, each from the five recursive inputs.
pub fn summarize_trajectory(summarizer: &dyn Summarizer, query: &str, traj: &Trajectory) -> Result<Vec<Summary>> {
    let mut out = Vec::with_capacity(traj.len());
    let mut prev = Summary::empty();
    let mut prev_response: Option<&str> = None;
    for step in traj.steps() {
        let next = summarizer.update(query, &prev, prev_response, step)?;
        out.push(next.clone());
        prev = next;
        prev_response = step.response.as_deref();
    }
    Ok(out)
}

/// Summaries keyed by `(task_id, t)`, stored as one JSON record per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SummaryCache {
    entries: BTreeMap<(String, usize), Summary>,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    task_id: String,
    t: usize,
    summary: Summary,
}

impl SummaryCache {
    pub fn get(&self, task_id: &str, t: usize) -> Option<&Summary> {
        self.entries.get(&(task_id.to_string(), t))
    }

    pub fn insert(&mut self, task_id: &str, summary: Summary) {
        self.entries.insert((task_id.to_string(), summary.step_index), summary);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cache = SummaryCache::default();
        if !path.exists() {
            return Ok(cache);
        }
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(&line)?;
            if v.get("schema").is_some() {
                continue;
            }
            let l: CacheLine = serde_json::from_value(v)?;
            cache.entries.insert((l.task_id, l.t), l.summary);
        }
        Ok(cache)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for ((task_id, t), s) in &self.entries {
            let line = CacheLine { task_id: task_id.clone(), t: *t, summary: s.clone() };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        Ok(())
    }
}
