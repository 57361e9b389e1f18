//! Benchmark runs, Avg@k accuracy, and the context-mode and n ablations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::ChatBackend;
use crate::error::{Error, Result};
use crate::judge::{ExactMatchJudge, Judge};
use crate::policy::{AgentProfile, Policy, RemotePolicy, ScriptedPolicy};
use crate::scorer::{
    ConfidenceScorer, OracleScorer, RelevanceScorer, RemotePrmScorer, ScorerKind, StepScorer, VerbalProgressScorer,
};
use crate::search::{run_episode, EpisodeEnv, EpisodeResult, SearchConfig, DEFAULT_N};
use crate::seed;
use crate::summary::{ExtractiveSummarizer, Summarizer};
use crate::trajectory::{ContextMode, TaskInstance};
use crate::world::{World, WorldSpec};

pub const REPORT_SCHEMA: &str = "infogain/report";
pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_RUNS_PER_TASK: usize = 3;
pub const DEFAULT_N_SWEEP: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Every report row must reach this Avg@k.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_avg_at_k: Option<f64>,
}

fn default_runs() -> usize {
    DEFAULT_RUNS_PER_TASK
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSuite {
    pub suite_id: String,
    pub tasks: Vec<TaskInstance>,
    #[serde(default = "default_runs")]
    pub runs_per_task: usize,
    #[serde(default)]
    pub thresholds: Thresholds,
}

impl BenchmarkSuite {
    pub fn new(suite_id: impl Into<String>, tasks: Vec<TaskInstance>) -> Self {
        BenchmarkSuite {
            suite_id: suite_id.into(),
            tasks,
            runs_per_task: DEFAULT_RUNS_PER_TASK,
            thresholds: Thresholds::default(),
        }
    }

    /// Worlds for `seeds`, cycling hop depth over {2, 3} and branching over
    /// {2, 3}.
    pub fn standard(suite_id: impl Into<String>, seeds: std::ops::Range<u64>) -> Result<Self> {
        let tasks =
            seeds.map(|s| Ok(World::from_ref(&standard_spec(s).world_ref())?.task())).collect::<Result<Vec<_>>>()?;
        Ok(Self::new(suite_id, tasks))
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::EmptySuite);
        }
        if self.runs_per_task == 0 {
            return Err(Error::InvalidConfig("runs_per_task must be >= 1".into()));
        }
        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            t.validate()?;
            if !seen.insert(&t.task_id) {
                return Err(Error::InvalidConfig(format!("duplicate task id `{}`", t.task_id)));
            }
        }
        Ok(())
    }
}

pub fn standard_spec(seed: u64) -> WorldSpec {
    WorldSpec::new(seed, 2 + (seed % 2) as usize, 2 + ((seed / 2) % 2) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Scripted,
    Remote,
}

/// Search settings shared by every episode of a run; per-row ablations
/// override `n` or `context_mode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub n: usize,
    /// Absolute step budget; `None` uses each world's default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    pub context_mode: ContextMode,
    pub seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings { n: DEFAULT_N, max_steps: None, context_mode: ContextMode::Summary, seed: 0 }
    }
}

/// Builds the per-task policy and scorer for each episode.
pub struct Harness {
    pub scorer: ScorerKind,
    pub policy: PolicyKind,
    pub profile: AgentProfile,
    pub m_rollouts: usize,
    pub summarizer: Arc<dyn Summarizer>,
    pub judge: Arc<dyn Judge>,
    pub backend: Option<Arc<dyn ChatBackend>>,
    worlds: Mutex<HashMap<String, Arc<World>>>,
    oracles: Mutex<HashMap<(String, usize), Arc<OracleScorer>>>,
}

impl Harness {
    pub fn new(scorer: ScorerKind) -> Self {
        Harness {
            scorer,
            policy: PolicyKind::Scripted,
            profile: AgentProfile::default(),
            m_rollouts: 8,
            summarizer: Arc::new(ExtractiveSummarizer::default()),
            judge: Arc::new(ExactMatchJudge),
            backend: None,
            worlds: Mutex::new(HashMap::new()),
            oracles: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_profile(mut self, profile: AgentProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn with_backend(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn with_policy(mut self, policy: PolicyKind) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_summarizer(mut self, summarizer: Arc<dyn Summarizer>) -> Self {
        self.summarizer = summarizer;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let needs_backend = self.scorer.needs_backend() || self.policy == PolicyKind::Remote;
        if needs_backend && self.backend.is_none() {
            return Err(Error::InvalidConfig(format!("scorer `{}` with this policy needs a backend", self.scorer)));
        }
        if self.scorer == ScorerKind::Oracle && self.policy != PolicyKind::Scripted {
            return Err(Error::NonEnumerablePolicy("the oracle scorer needs a scripted policy".into()));
        }
        Ok(())
    }

    pub fn world(&self, task: &TaskInstance) -> Result<Arc<World>> {
        if let Some(w) = self.worlds.lock().expect("world cache").get(&task.task_id) {
            return Ok(w.clone());
        }
        let world_ref = task
            .world_ref
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig(format!("task `{}` has no simulated world", task.task_id)))?;
        let world = Arc::new(World::from_ref(world_ref)?);
        if world.task() != *task {
            return Err(Error::InvalidConfig(format!("task `{}` does not match its world", task.task_id)));
        }
        self.worlds.lock().expect("world cache").insert(task.task_id.clone(), world.clone());
        Ok(world)
    }

    fn backend(&self) -> Result<Arc<dyn ChatBackend>> {
        self.backend.clone().ok_or_else(|| Error::InvalidConfig("no backend configured".into()))
    }

    /// Runs one episode of `task` under `config`.
    pub fn episode(&self, task: &TaskInstance, config: &SearchConfig) -> Result<EpisodeResult> {
        let world = self.world(task)?;
        let scripted = Arc::new(ScriptedPolicy::for_world(&world, self.profile));
        let policy: Box<dyn Policy> = match self.policy {
            PolicyKind::Scripted => Box::new(scripted.as_ref().clone()),
            PolicyKind::Remote => Box::new(RemotePolicy::new(self.backend()?, "agent").with_top_logprobs(10)),
        };
        let scorer: Arc<dyn StepScorer> = match self.scorer {
            ScorerKind::Oracle => {
                let key = (task.task_id.clone(), config.max_steps);
                let mut cache = self.oracles.lock().expect("oracle cache");
                cache
                    .entry(key)
                    .or_insert_with(|| {
                        Arc::new(OracleScorer::new(world.clone(), scripted, config.max_steps, self.m_rollouts))
                    })
                    .clone()
            }
            ScorerKind::Relevance => Arc::new(RelevanceScorer),
            ScorerKind::Confidence => Arc::new(ConfidenceScorer),
            ScorerKind::Verbal => Arc::new(VerbalProgressScorer::new(self.backend()?)),
            ScorerKind::RemotePrm => Arc::new(RemotePrmScorer::new(self.backend()?, self.m_rollouts)),
        };
        let env = EpisodeEnv {
            world: &world,
            policy: policy.as_ref(),
            scorer: scorer.as_ref(),
            summarizer: self.summarizer.as_ref(),
            judge: self.judge.as_ref(),
        };
        run_episode(&env, task, config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub task_id: String,
    pub run: usize,
    pub seed: u64,
    pub correct: bool,
    pub answered: bool,
    pub steps_used: usize,
    /// The episode could not finish because a model backend failed; it
    /// counts as incorrect.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub backend_failed: bool,
    /// Steps where scoring failed and candidate 0 was taken.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub scorer_failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub n: usize,
    pub context_mode: ContextMode,
    pub scorer: ScorerKind,
    pub avg_at_k: f64,
    /// Accuracy of each run over all tasks.
    pub run_accuracies: Vec<f64>,
    /// Accuracy per hop depth, keyed `h<depth>`.
    pub by_difficulty: BTreeMap<String, f64>,
    pub ci95: [f64; 2],
    pub episodes: Vec<EpisodeOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub version: u32,
    pub suite_id: String,
    pub runs_per_task: usize,
    pub rows: Vec<ReportRow>,
}

/// Wall-clock measurements, kept apart from the reproducible report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub row_millis: Vec<u128>,
    pub episodes: usize,
}

/// Wilson score interval at 95% for `successes` out of `trials`.
pub fn binomial_ci95(successes: usize, trials: usize) -> [f64; 2] {
    if trials == 0 {
        return [0.0, 1.0];
    }
    let z = 1.959_963_984_540_054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * ((p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt()) / denom;
    [(center - half).max(0.0), (center + half).min(1.0)]
}

/// Normal-approximation 95% interval for the difference of two independent
/// proportions `p1 − p0`.
pub fn delta_ci95(p1: f64, n1: usize, p0: f64, n0: usize) -> [f64; 2] {
    let z = 1.959_963_984_540_054_f64;
    let se = (p1 * (1.0 - p1) / n1 as f64 + p0 * (1.0 - p0) / n0 as f64).sqrt();
    let d = p1 - p0;
    [d - z * se, d + z * se]
}

fn hop_label(task: &TaskInstance) -> String {
    task.world_ref
        .as_deref()
        .and_then(|r| r.parse::<WorldSpec>().ok())
        .map(|s| format!("h{}", s.hop_depth))
        .unwrap_or_else(|| "other".into())
}

fn run_seed(base: u64, run: usize) -> u64 {
    seed::combine(&[base, run as u64])
}

fn run_row(suite: &BenchmarkSuite, harness: &Harness, settings: &RunSettings, label: String) -> Result<ReportRow> {
    let jobs: Vec<(usize, usize)> =
        (0..suite.runs_per_task).flat_map(|r| (0..suite.tasks.len()).map(move |i| (r, i))).collect();
    let episodes = jobs
        .par_iter()
        .map(|&(run, i)| {
            let task = &suite.tasks[i];
            let world = harness.world(task)?;
            let seed = run_seed(settings.seed, run);
            let config = SearchConfig {
                n: settings.n,
                max_steps: settings.max_steps.unwrap_or_else(|| world.spec.default_budget()),
                context_mode: settings.context_mode,
                seed,
            };
            let base = EpisodeOutcome {
                task_id: task.task_id.clone(),
                run,
                seed,
                correct: false,
                answered: false,
                steps_used: 0,
                backend_failed: false,
                scorer_failures: 0,
                error: None,
            };
            match harness.episode(task, &config) {
                Ok(r) => Ok(EpisodeOutcome {
                    correct: r.correct,
                    answered: r.answered,
                    steps_used: r.steps_used,
                    scorer_failures: r.scorer_failures(),
                    ..base
                }),
                Err(e) if e.is_backend() => {
                    Ok(EpisodeOutcome { backend_failed: true, error: Some(e.to_string()), ..base })
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_row(suite, label, settings, harness.scorer, episodes))
}

/// Aggregates raw episode outcomes into a report row.
pub fn summarize_row(
    suite: &BenchmarkSuite,
    label: String,
    settings: &RunSettings,
    scorer: ScorerKind,
    episodes: Vec<EpisodeOutcome>,
) -> ReportRow {
    let k = suite.runs_per_task;
    let tasks = suite.tasks.len() as f64;
    let run_accuracies: Vec<f64> =
        (0..k).map(|r| episodes.iter().filter(|e| e.run == r && e.correct).count() as f64 / tasks).collect();
    let avg_at_k = run_accuracies.iter().sum::<f64>() / k as f64;
    let hops: HashMap<&str, String> = suite.tasks.iter().map(|t| (t.task_id.as_str(), hop_label(t))).collect();
    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for e in &episodes {
        let g = groups.entry(hops[e.task_id.as_str()].clone()).or_default();
        g.0 += e.correct as usize;
        g.1 += 1;
    }
    let correct = episodes.iter().filter(|e| e.correct).count();
    ReportRow {
        label,
        n: settings.n,
        context_mode: settings.context_mode,
        scorer,
        avg_at_k,
        run_accuracies,
        by_difficulty: groups.into_iter().map(|(h, (c, t))| (h, c as f64 / t as f64)).collect(),
        ci95: binomial_ci95(correct, episodes.len()),
        episodes,
    }
}

fn run_rows(
    suite: &BenchmarkSuite,
    harness: &Harness,
    rows: Vec<(String, RunSettings)>,
) -> Result<(Report, RuntimeStats)> {
    suite.validate()?;
    harness.validate()?;
    let mut stats = RuntimeStats::default();
    let mut out = Vec::with_capacity(rows.len());
    for (label, settings) in rows {
        if settings.n == 0 {
            return Err(Error::InvalidConfig("n must be >= 1".into()));
        }
        let start = Instant::now();
        let row = run_row(suite, harness, &settings, label)?;
        stats.row_millis.push(start.elapsed().as_millis());
        stats.episodes += row.episodes.len();
        out.push(row);
    }
    let report = Report {
        schema: REPORT_SCHEMA.into(),
        version: REPORT_SCHEMA_VERSION,
        suite_id: suite.suite_id.clone(),
        runs_per_task: suite.runs_per_task,
        rows: out,
    };
    Ok((report, stats))
}

pub fn run_benchmark(
    suite: &BenchmarkSuite,
    harness: &Harness,
    settings: &RunSettings,
) -> Result<(Report, RuntimeStats)> {
    let label = format!("n={} {}", settings.n, settings.context_mode);
    run_rows(suite, harness, vec![(label, settings.clone())])
}

/// One row per context mode, with identical seeds across rows.
pub fn ablate_context_modes(
    suite: &BenchmarkSuite,
    harness: &Harness,
    settings: &RunSettings,
    modes: &[ContextMode],
) -> Result<(Report, RuntimeStats)> {
    let rows = modes.iter().map(|&m| (m.to_string(), RunSettings { context_mode: m, ..settings.clone() })).collect();
    run_rows(suite, harness, rows)
}

/// One row per candidate count, with identical seeds across rows.
pub fn sweep_n(
    suite: &BenchmarkSuite,
    harness: &Harness,
    settings: &RunSettings,
    n_values: &[usize],
) -> Result<(Report, RuntimeStats)> {
    let rows = n_values.iter().map(|&n| (format!("n={n}"), RunSettings { n, ..settings.clone() })).collect();
    run_rows(suite, harness, rows)
}

impl Report {
    /// Episodes touched by a backend failure, either aborted or with a
    /// scoring fallback.
    pub fn backend_failures(&self) -> usize {
        self.rows.iter().flat_map(|r| &r.episodes).filter(|e| e.backend_failed || e.scorer_failures > 0).count()
    }

    /// A header line carrying the schema and suite fields, then one row per
    /// line.
    pub fn to_jsonl(&self) -> String {
        let header = serde_json::json!({
            "schema": self.schema,
            "version": self.version,
            "suite_id": self.suite_id,
            "runs_per_task": self.runs_per_task,
        });
        let mut out = header.to_string();
        out.push('\n');
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Report> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Head {
            schema: String,
            version: u32,
            suite_id: String,
            runs_per_task: usize,
        }
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::schema("header", "empty report"))?;
        let h: Head = serde_json::from_str(first).map_err(|e| Error::schema("header", e.to_string()))?;
        if h.schema != REPORT_SCHEMA || h.version > REPORT_SCHEMA_VERSION {
            return Err(Error::schema("header", format!("unsupported report {} v{}", h.schema, h.version)));
        }
        let rows = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::schema(format!("line {}", i + 1), e.to_string())))
            .collect::<Result<Vec<ReportRow>>>()?;
        Ok(Report { schema: h.schema, version: h.version, suite_id: h.suite_id, runs_per_task: h.runs_per_task, rows })
    }

    /// Rows whose Avg@k falls below the suite threshold.
    pub fn violations(&self, thresholds: &Thresholds) -> Vec<String> {
        let Some(min) = thresholds.min_avg_at_k else { return Vec::new() };
        self.rows
            .iter()
            .filter(|r| r.avg_at_k < min)
            .map(|r| format!("{}: Avg@{} {:.4} < {:.4}", r.label, self.runs_per_task, r.avg_at_k, min))
            .collect()
    }

    /// Plain-text table: one row per configuration, one column per hop depth.
    pub fn render_table(&self) -> String {
        let cols: BTreeSet<&String> = self.rows.iter().flat_map(|r| r.by_difficulty.keys()).collect();
        let label_w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "suite: {}  runs per task: {}", self.suite_id, self.runs_per_task);
        let _ = write!(out, "{:<label_w$}", "config");
        for c in &cols {
            let _ = write!(out, " {c:>7}");
        }
        let _ = writeln!(out, " {:>7}  {:>15}", format!("Avg@{}", self.runs_per_task), "95% CI");
        for r in &self.rows {
            let _ = write!(out, "{:<label_w$}", r.label);
            for c in &cols {
                match r.by_difficulty.get(*c) {
                    Some(v) => {
                        let _ = write!(out, " {:>7.1}", v * 100.0);
                    }
                    None => {
                        let _ = write!(out, " {:>7}", "-");
                    }
                }
            }
            let _ =
                writeln!(out, " {:>7.1}  [{:>5.1}, {:>5.1}]", r.avg_at_k * 100.0, r.ci95[0] * 100.0, r.ci95[1] * 100.0);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(task: &str, run: usize, correct: bool) -> EpisodeOutcome {
        EpisodeOutcome {
            task_id: task.into(),
            run,
            seed: 0,
            correct,
            answered: correct,
            steps_used: 1,
            backend_failed: false,
            scorer_failures: 0,
            error: None,
        }
    }

    fn tiny_suite(n: u64) -> BenchmarkSuite {
        BenchmarkSuite::standard("tiny", 0..n).unwrap()
    }

    #[test]
    fn avg_examples() {
        let suite = tiny_suite(2);
        let (a, b) = (suite.tasks[0].task_id.clone(), suite.tasks[1].task_id.clone());
        let eps = vec![
            outcome(&a, 0, true),
            outcome(&b, 0, false),
            outcome(&a, 1, false),
            outcome(&b, 1, true),
            outcome(&a, 2, true),
            outcome(&b, 2, true),
        ];
        let row = summarize_row(&suite, "x".into(), &RunSettings::default(), ScorerKind::Oracle, eps);
        assert_eq!(row.run_accuracies, vec![0.5, 0.5, 1.0]);
        assert!((row.avg_at_k - 2.0 / 3.0).abs() < 1e-12);
        let one = BenchmarkSuite { tasks: vec![suite.tasks[0].clone()], ..suite.clone() };
        let eps = (0..3).map(|r| outcome(&a, r, true)).collect();
        assert_eq!(summarize_row(&one, "x".into(), &RunSettings::default(), ScorerKind::Oracle, eps).avg_at_k, 1.0);
    }

    #[test]
    fn empty_suite_rejected() {
        let s = BenchmarkSuite::new("e", vec![]);
        let h = Harness::new(ScorerKind::Relevance);
        assert!(matches!(run_benchmark(&s, &h, &RunSettings::default()), Err(Error::EmptySuite)));
    }

    #[test]
    fn oracle_ignores_context_mode() {
        let suite = tiny_suite(4);
        let h = Harness::new(ScorerKind::Oracle);
        let (r, _) = ablate_context_modes(&suite, &h, &RunSettings::default(), &ContextMode::ABLATION_PRESETS).unwrap();
        assert_eq!(r.rows.len(), 5);
        for row in &r.rows[1..] {
            assert_eq!(row.avg_at_k, r.rows[0].avg_at_k);
            assert_eq!(row.episodes, r.rows[0].episodes);
        }
    }

    #[test]
    fn sweep_rows_and_base_agent() {
        let suite = tiny_suite(3);
        let h = Harness::new(ScorerKind::Relevance);
        let (r, _) = sweep_n(&suite, &h, &RunSettings::default(), &[1, 2]).unwrap();
        assert_eq!(r.rows.len(), 2);
        let (one, _) = sweep_n(&suite, &Harness::new(ScorerKind::Oracle), &RunSettings::default(), &[1]).unwrap();
        assert_eq!(one.rows[0].episodes, r.rows[0].episodes);
        assert!(r.render_table().contains("Avg@3"));
    }

    #[test]
    fn thresholds() {
        let suite = tiny_suite(2);
        let (r, _) = run_benchmark(&suite, &Harness::new(ScorerKind::Oracle), &RunSettings::default()).unwrap();
        assert!(r.violations(&Thresholds { min_avg_at_k: Some(1.1) }).len() == 1);
        assert!(r.violations(&Thresholds { min_avg_at_k: Some(0.0) }).is_empty());
    }

    #[test]
    fn backend_scorers_need_a_backend() {
        let suite = tiny_suite(1);
        let h = Harness::new(ScorerKind::Verbal);
        assert!(matches!(run_benchmark(&suite, &h, &RunSettings::default()), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn wilson_interval() {
        let [lo, hi] = binomial_ci95(50, 100);
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
        assert_eq!(binomial_ci95(0, 0), [0.0, 1.0]);
    }
}
