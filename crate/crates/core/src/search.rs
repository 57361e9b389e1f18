//! Best-of-n guided search: at every step propose `n` candidates, score
//! them, and execute the highest-scoring one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::judge::Judge;
use crate::policy::Policy;
use crate::scorer::{ScoreRequest, StepScorer};
use crate::summary::{Summarizer, Summary};
use crate::trajectory::{render_context, ContextMode, TaskInstance, Trajectory};
use crate::world::World;

pub const EPISODE_SCHEMA: &str = "infogain/episodes";
pub const EPISODE_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_N: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub n: usize,
    pub max_steps: usize,
    pub context_mode: ContextMode,
    pub seed: u64,
}

impl SearchConfig {
    pub fn for_world(world: &World, seed: u64) -> Self {
        SearchConfig { n: DEFAULT_N, max_steps: world.spec.default_budget(), context_mode: ContextMode::Summary, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be >= 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Index of the largest score; the first one wins ties. NaN never wins
/// against a number.
pub fn argmax_select(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] || (scores[best].is_nan() && !s.is_nan()) {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub scores: Vec<f64>,
    pub selected: usize,
    /// Scoring failed at this step and candidate 0 was taken.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub scorer_failed: bool,
    /// Some score was a sentinel for an unparseable scorer output.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub sentinel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub trajectory: Trajectory,
    pub answered: bool,
    pub correct: bool,
    pub steps_used: usize,
    pub steps: Vec<StepRecord>,
}

impl EpisodeResult {
    /// Number of steps that fell back to candidate 0 after a scorer failure.
    pub fn scorer_failures(&self) -> usize {
        self.steps.iter().filter(|s| s.scorer_failed).count()
    }

    /// Per-step candidate scores, `t` rows of `n`.
    pub fn score_table(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.scores.clone()).collect()
    }
}

/// Tools, judge, and models one episode runs against.
pub struct EpisodeEnv<'a> {
    pub world: &'a World,
    pub policy: &'a dyn Policy,
    pub scorer: &'a dyn StepScorer,
    pub summarizer: &'a dyn Summarizer,
    pub judge: &'a dyn Judge,
}

pub fn run_episode(env: &EpisodeEnv<'_>, task: &TaskInstance, config: &SearchConfig) -> Result<EpisodeResult> {
    config.validate()?;
    let mut traj = Trajectory::new(task.task_id.clone());
    let mut summary = Summary::empty();
    let mut records = Vec::new();
    while !traj.is_terminal() && traj.len() < config.max_steps {
        let context = render_context(&traj, Some(&summary), config.context_mode)?;
        let candidates = env.policy.propose(task, &traj, &context, config.n, config.seed)?;
        if candidates.is_empty() {
            return Err(Error::ParseFailure("policy returned no candidates".into()));
        }
        let prev_response = traj.last_response().map(str::to_string);
        let scored: Vec<_> = candidates
            .par_iter()
            .map(|c| {
                env.scorer.score(&ScoreRequest {
                    task,
                    prefix: &traj,
                    context: &context,
                    prev_response: prev_response.as_deref(),
                    candidate: c,
                })
            })
            .collect();
        let t = traj.len() + 1;
        let record = match scored.into_iter().collect::<Result<Vec<_>>>() {
            Ok(scores) => {
                let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
                StepRecord {
                    t,
                    selected: argmax_select(&values),
                    scores: values,
                    scorer_failed: false,
                    sentinel: scores.iter().any(|s| s.flagged),
                }
            }
            Err(e) => {
                tracing::warn!(task = %task.task_id, t, error = %e, "scoring failed; taking candidate 0");
                StepRecord { t, scores: Vec::new(), selected: 0, scorer_failed: true, sentinel: false }
            }
        };
        let chosen = &candidates[record.selected];
        env.world.step(&mut traj, &chosen.reasoning, &chosen.action)?;
        records.push(record);
        if config.context_mode == ContextMode::Summary {
            let step = traj.steps().last().expect("step just pushed");
            summary = env.summarizer.update(&task.query, &summary, prev_response.as_deref(), step)?;
        }
    }
    let correct = match traj.terminal_answer() {
        Some(a) => env.judge.judge(a, &task.gold_answer)?,
        None => false,
    };
    Ok(EpisodeResult {
        task_id: task.task_id.clone(),
        answered: traj.is_terminal(),
        correct,
        steps_used: traj.len(),
        trajectory: traj,
        steps: records,
    })
}
