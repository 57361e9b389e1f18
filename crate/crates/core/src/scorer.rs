//! Step scorers: given the question, rendered context, previous tool
//! response, and a candidate step, return a scalar score.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::backend::{ChatBackend, ChatMessage, ChatRequest};
use crate::error::{Error, Result};
use crate::policy::{state_signature, CandidateStep, ScriptedPolicy};
use crate::reward::parse_predicted_score;
use crate::trajectory::{ContextMode, TaskInstance, Trajectory};
use crate::world::{success_prob_with, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<String>,
    pub scorer_id: String,
    /// The value is a sentinel standing in for an unparseable output.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flagged: bool,
}

impl StepScore {
    pub fn new(value: f64, scorer_id: impl Into<String>) -> Self {
        StepScore { value, analysis: None, scorer_id: scorer_id.into(), flagged: false }
    }
}

/// Inputs for scoring one candidate.
pub struct ScoreRequest<'a> {
    pub task: &'a TaskInstance,
    pub prefix: &'a Trajectory,
    /// History rendered in the scorer's context mode.
    pub context: &'a str,
    pub prev_response: Option<&'a str>,
    pub candidate: &'a CandidateStep,
}

pub trait StepScorer: Send + Sync {
    fn id(&self) -> String;
    fn score(&self, req: &ScoreRequest<'_>) -> Result<StepScore>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScorerKind {
    Oracle,
    RemotePrm,
    Relevance,
    Confidence,
    Verbal,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 5] =
        [ScorerKind::Oracle, ScorerKind::RemotePrm, ScorerKind::Relevance, ScorerKind::Confidence, ScorerKind::Verbal];

    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::Oracle => "oracle",
            ScorerKind::RemotePrm => "remote-prm",
            ScorerKind::Relevance => "relevance",
            ScorerKind::Confidence => "confidence",
            ScorerKind::Verbal => "verbal",
        }
    }

    pub fn needs_backend(self) -> bool {
        matches!(self, ScorerKind::RemotePrm | ScorerKind::Verbal)
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScorerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scorer `{s}`")))
    }
}

impl Serialize for ScorerKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ScorerKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Scorer selection as written in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub scorer: ScorerKind,
    pub context_mode: ContextMode,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig { scorer: ScorerKind::Oracle, context_mode: ContextMode::Summary }
    }
}

/// Exact gain under a scripted policy:
/// `(p(prefix + candidate) − p(prefix)) · M/2`.
pub struct OracleScorer {
    world: Arc<World>,
    policy: Arc<ScriptedPolicy>,
    budget: usize,
    m_rollouts: usize,
    cache: Mutex<HashMap<u64, f64>>,
}

impl OracleScorer {
    pub fn new(world: Arc<World>, policy: Arc<ScriptedPolicy>, budget: usize, m_rollouts: usize) -> Self {
        OracleScorer { world, policy, budget, m_rollouts, cache: Mutex::new(HashMap::new()) }
    }

    /// Exact success probability of `traj`, memoized by action history.
    pub fn success_prob(&self, traj: &Trajectory) -> Result<f64> {
        let key = state_signature(&traj.task_id, traj.actions());
        if let Some(p) = self.cache.lock().expect("oracle cache").get(&key) {
            return Ok(*p);
        }
        let p = success_prob_with(&self.world, &self.policy, traj, self.budget)?;
        self.cache.lock().expect("oracle cache").insert(key, p);
        Ok(p)
    }

    pub fn oracle_score(&self, prefix: &Trajectory, candidate: &CandidateStep) -> Result<StepScore> {
        let before = self.success_prob(prefix)?;
        let mut after = prefix.clone();
        self.world.step(&mut after, &candidate.reasoning, &candidate.action)?;
        let p_after = self.success_prob(&after)?;
        Ok(StepScore::new((p_after - before) * self.m_rollouts as f64 / 2.0, self.id()))
    }
}

impl StepScorer for OracleScorer {
    fn id(&self) -> String {
        "oracle".into()
    }

    fn score(&self, req: &ScoreRequest<'_>) -> Result<StepScore> {
        self.oracle_score(req.prefix, req.candidate)
    }
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Jaccard similarity of lower-cased whitespace token sets; two empty sets
/// score 0.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let (a, b) = (tokens(a), tokens(b));
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// The text of the past steps that a candidate is compared against.
pub fn past_text(traj: &Trajectory) -> String {
    traj.steps().iter().map(|s| format!("{} {}", s.reasoning, s.action)).collect::<Vec<_>>().join(" ")
}

pub fn relevance_score(candidate: &CandidateStep, traj: &Trajectory) -> StepScore {
    StepScore::new(jaccard(&candidate.text(), &past_text(traj)), "relevance")
}

pub struct RelevanceScorer;

impl StepScorer for RelevanceScorer {
    fn id(&self) -> String {
        "relevance".into()
    }

    fn score(&self, req: &ScoreRequest<'_>) -> Result<StepScore> {
        Ok(relevance_score(req.candidate, req.prefix))
    }
}

/// Negated mean of each position's top-10 log-probabilities, averaged over
/// positions.
pub fn confidence_score(candidate: &CandidateStep) -> Result<StepScore> {
    let rows = candidate.logprob_top10.as_ref().ok_or(Error::MissingLogprobs)?;
    let rows: Vec<&Vec<f64>> = rows.iter().filter(|r| !r.is_empty()).collect();
    if rows.is_empty() {
        return Err(Error::MissingLogprobs);
    }
    let total: f64 = rows.iter().map(|r| -r.iter().sum::<f64>() / r.len() as f64).sum();
    Ok(StepScore::new(total / rows.len() as f64, "confidence"))
}

pub struct ConfidenceScorer;

impl StepScorer for ConfidenceScorer {
    fn id(&self) -> String {
        "confidence".into()
    }

    fn score(&self, req: &ScoreRequest<'_>) -> Result<StepScore> {
        confidence_score(req.candidate)
    }
}

/// First integer in 1..=5 appearing in `text`.
pub fn parse_progress(text: &str) -> Option<u8> {
    text.split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .filter_map(|s| s.parse::<u64>().ok())
        .find(|v| (1..=5).contains(v))
        .map(|v| v as u8)
}

pub fn render_scoring_prompt(req: &ScoreRequest<'_>) -> String {
    format!(
        "Question: {}\n\nContext:\n{}\nPrevious tool response:\n{}\n\nCandidate step:\nReasoning: {}\nAction: {}\n",
        req.task.query,
        if req.context.is_empty() { "(none)\n" } else { req.context },
        req.prev_response.unwrap_or("(none)"),
        req.candidate.reasoning,
        req.candidate.action
    )
}

pub const VERBAL_SYSTEM_PROMPT: &str = "\
You rate how much a candidate step moves a research agent toward answering the question.
Reply with a single integer from 1 (no progress) to 5 (decisive progress).";

pub struct VerbalProgressScorer {
    backend: Arc<dyn ChatBackend>,
}

impl VerbalProgressScorer {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        VerbalProgressScorer { backend }
    }
}

impl StepScorer for VerbalProgressScorer {
    fn id(&self) -> String {
        "verbal-1to5".into()
    }

    fn score(&self, req: &ScoreRequest<'_>) -> Result<StepScore> {
        let chat = ChatRequest::new(vec![
            ChatMessage::system(VERBAL_SYSTEM_PROMPT),
            ChatMessage::user(render_scoring_prompt(req)),
        ]);
        let text = self.backend.complete(&chat)?.into_iter().next().map(|c| c.content).unwrap_or_default();
        let mut s = match parse_progress(&text) {
            Some(v) => StepScore::new(v as f64, self.id()),
            None => StepScore { flagged: true, ..StepScore::new(1.0, self.id()) },
        };
        s.analysis = Some(text);
        Ok(s)
    }
}

pub const PRM_SYSTEM_PROMPT: &str = "\
You evaluate one candidate step of a tool-using research agent.
Analyze how well it interprets the previous tool output, how informative its tool call is, \
and the quality of its plan. Then estimate how much the step changes the chance of reaching \
the correct answer, on a scale from -{half} to {half}.
End with a final line of the form
Score: <number>";

/// A generative step scorer served by a chat model.
pub struct RemotePrmScorer {
    backend: Arc<dyn ChatBackend>,
    m_rollouts: usize,
}

impl RemotePrmScorer {
    pub fn new(backend: Arc<dyn ChatBackend>, m_rollouts: usize) -> Self {
        RemotePrmScorer { backend, m_rollouts }
    }
}

impl StepScorer for RemotePrmScorer {
    fn id(&self) -> String {
        "remote-prm".into()
    }

    fn score(&self, req: &ScoreRequest<'_>) -> Result<StepScore> {
        let half = self.m_rollouts as f64 / 2.0;
        let system = PRM_SYSTEM_PROMPT.replace("{half}", &half.to_string());
        let chat = ChatRequest::new(vec![ChatMessage::system(system), ChatMessage::user(render_scoring_prompt(req))]);
        let text = self.backend.complete(&chat)?.into_iter().next().map(|c| c.content).unwrap_or_default();
        let mut s = match parse_predicted_score(&text, self.m_rollouts) {
            Ok((v, _)) => StepScore::new(v, self.id()),
            Err(_) => StepScore { flagged: true, ..StepScore::new(-half, self.id()) },
        };
        s.analysis = Some(text);
        Ok(s)
    }
}
