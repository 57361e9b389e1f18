//! The `infogain` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{Annotator, PairRecord, PAIR_SCHEMA, PAIR_SCHEMA_VERSION};
use crate::backend::{ChatBackend, HttpChatBackend};
use crate::config::{JudgeKind, RunConfig, SummarizerKind};
use crate::error::{Error, Result};
use crate::eval::{
    ablate_context_modes, run_benchmark, sweep_n, BenchmarkSuite, Harness, PolicyKind, Report, RunSettings,
};
use crate::io::{self, Manifest, RECORD_VERSION};
use crate::judge::{ExactMatchJudge, Judge, RemoteJudge};
use crate::policy::{AgentProfile, Policy, RemotePolicy, ScriptedPolicy};
use crate::reward::{reward_records, ScorerRollout, Side};
use crate::scorer::{render_scoring_prompt, ScoreRequest, ScorerKind};
use crate::search::{SearchConfig, EPISODE_SCHEMA, EPISODE_SCHEMA_VERSION};
use crate::summary::{
    emit_sft_record, summarize_trajectory, ExtractiveSummarizer, RemoteSummarizer, Summarizer, Summary, SummaryCache,
};
use crate::trajectory::{render_context, ContextMode, TaskInstance, Trajectory};
use crate::world::{generate_world, World, WorldSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "infogain", version, about = "Step-level information-gain annotation, rewards, and guided search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulated world generation.
    #[command(subcommand)]
    World(WorldCmd),
    /// Annotate preference pairs with Monte-Carlo rollouts.
    Annotate(AnnotateArgs),
    /// Compute scorer training rewards from predictions on annotated pairs.
    Rewards(RewardsArgs),
    /// Export summary training records, a summary cache, and scorer inputs.
    Export(ExportArgs),
    /// Best-of-n guided search.
    #[command(subcommand)]
    Search(SearchCmd),
    /// Run a benchmark suite and report Avg@k.
    Bench(BenchArgs),
    /// Context-mode or candidate-count ablation.
    Ablate(AblateArgs),
}

#[derive(Debug, Subcommand)]
enum WorldCmd {
    /// Generate world bundles and their task records.
    Gen(WorldGenArgs),
}

#[derive(Debug, Subcommand)]
enum SearchCmd {
    /// Run one guided-search episode per task.
    Run(SearchArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML or JSON config file; a run manifest also works.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WorldGenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    hops: Option<usize>,
    #[arg(long)]
    branching: Option<usize>,
    #[arg(long)]
    entities: Option<usize>,
    #[arg(long)]
    noise: Option<usize>,
    /// Number of worlds, with consecutive seeds.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Rollouts per estimate.
    #[arg(long = "M", alias = "m-rollouts")]
    m_rollouts: Option<usize>,
    #[arg(long)]
    max_pairs: Option<usize>,
    #[arg(long)]
    rollout_budget: Option<usize>,
    #[arg(long)]
    guess_prob: Option<f64>,
}

#[derive(Debug, Args)]
struct RewardsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Also write group-normalized advantages.
    #[arg(long)]
    with_advantages: bool,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Trajectories to summarize (a pair run's prefix file works).
    #[arg(long)]
    trajectories: Option<PathBuf>,
    /// Pairs whose scorer inputs should be rendered.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long = "L", alias = "summary-bound")]
    summary_bound: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CliScorer {
    Oracle,
    RemotePrm,
    Relevance,
    Confidence,
    Verbal,
}

impl From<CliScorer> for ScorerKind {
    fn from(s: CliScorer) -> Self {
        match s {
            CliScorer::Oracle => ScorerKind::Oracle,
            CliScorer::RemotePrm => ScorerKind::RemotePrm,
            CliScorer::Relevance => ScorerKind::Relevance,
            CliScorer::Confidence => ScorerKind::Confidence,
            CliScorer::Verbal => ScorerKind::Verbal,
        }
    }
}

#[derive(Debug, Args)]
struct SearchOpts {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// summary, full, or lastK (e.g. last2).
    #[arg(long)]
    context_mode: Option<String>,
    #[arg(long, value_enum)]
    scorer: Option<CliScorer>,
    #[arg(long)]
    guess_prob: Option<f64>,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    search: SearchOpts,
    #[arg(long)]
    tasks: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    search: SearchOpts,
    /// Suite file (JSON).
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Task file, used as a suite when no suite file is given.
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AblationKind {
    Context,
    N,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Which variable to ablate.
    #[arg(value_enum)]
    kind: AblationKind,
    #[command(flatten)]
    bench: BenchArgs,
    /// Comma-separated candidate counts for the n sweep.
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<usize>>,
    /// Comma-separated context modes.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INVALID,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_backend() {
                EXIT_BACKEND
            } else {
                EXIT_INVALID
            }
        }
    }
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, common.seed);
    set(&mut cfg.workers, common.workers);
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, v: &Option<PathBuf>) {
    if v.is_some() {
        *slot = v.clone();
    }
}

fn apply_search(cfg: &mut RunConfig, s: &SearchOpts) -> Result<()> {
    set(&mut cfg.n, s.n);
    if s.max_steps.is_some() {
        cfg.max_steps = s.max_steps;
    }
    if let Some(m) = &s.context_mode {
        cfg.context_mode = m.parse()?;
    }
    set(&mut cfg.scorer, s.scorer.map(Into::into));
    set(&mut cfg.guess_prob, s.guess_prob);
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    let (cfg, name) = match &cli.command {
        Command::World(WorldCmd::Gen(a)) => {
            let mut c = base_config(&a.common)?;
            set(&mut c.hops, a.hops);
            set(&mut c.branching, a.branching);
            if a.entities.is_some() {
                c.entities = a.entities;
            }
            if a.noise.is_some() {
                c.noise_pages = a.noise;
            }
            set(&mut c.count, a.count);
            (c, "world gen")
        }
        Command::Annotate(a) => {
            let mut c = base_config(&a.common)?;
            set_path(&mut c.tasks, &a.tasks);
            set(&mut c.m_rollouts, a.m_rollouts);
            set(&mut c.max_pairs, a.max_pairs);
            if a.rollout_budget.is_some() {
                c.rollout_budget = a.rollout_budget;
            }
            set(&mut c.guess_prob, a.guess_prob);
            (c, "annotate")
        }
        Command::Rewards(a) => {
            let mut c = base_config(&a.common)?;
            set_path(&mut c.pairs, &a.pairs);
            set_path(&mut c.predictions, &a.predictions);
            c.with_advantages |= a.with_advantages;
            (c, "rewards")
        }
        Command::Export(a) => {
            let mut c = base_config(&a.common)?;
            set_path(&mut c.tasks, &a.tasks);
            set_path(&mut c.trajectories, &a.trajectories);
            set_path(&mut c.pairs, &a.pairs);
            set(&mut c.summary_bound, a.summary_bound);
            (c, "export")
        }
        Command::Search(SearchCmd::Run(a)) => {
            let mut c = base_config(&a.common)?;
            apply_search(&mut c, &a.search)?;
            set_path(&mut c.tasks, &a.tasks);
            (c, "search run")
        }
        Command::Bench(a) => (bench_config(a)?, "bench"),
        Command::Ablate(a) => {
            let mut c = bench_config(&a.bench)?;
            if let Some(v) = &a.n_values {
                c.n_values = v.clone();
            }
            if let Some(m) = &a.modes {
                c.context_modes = m.iter().map(|s| s.parse()).collect::<Result<_>>()?;
            }
            (c, if matches!(a.kind, AblationKind::N) { "ablate n" } else { "ablate context" })
        }
    };
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    pool.install(|| match name {
        "world gen" => world_gen(&cfg),
        "annotate" => annotate(&cfg),
        "rewards" => rewards(&cfg),
        "export" => export(&cfg),
        "search run" => search_run(&cfg),
        "bench" => bench(&cfg, Run::Bench),
        "ablate n" => bench(&cfg, Run::SweepN),
        _ => bench(&cfg, Run::Context),
    })
}

fn bench_config(a: &BenchArgs) -> Result<RunConfig> {
    let mut c = base_config(&a.common)?;
    apply_search(&mut c, &a.search)?;
    set_path(&mut c.suite, &a.suite);
    set_path(&mut c.tasks, &a.tasks);
    if a.runs.is_some() {
        c.runs_per_task = a.runs;
    }
    Ok(c)
}

fn make_backend(cfg: &RunConfig) -> Result<Option<Arc<dyn ChatBackend>>> {
    match &cfg.backend {
        Some(b) => Ok(Some(Arc::new(HttpChatBackend::new(b.clone())?))),
        None => Ok(None),
    }
}

fn need_backend(backend: &Option<Arc<dyn ChatBackend>>, what: &str) -> Result<Arc<dyn ChatBackend>> {
    backend.clone().ok_or_else(|| Error::InvalidConfig(format!("{what} needs a `backend` section in the config")))
}

fn make_judge(cfg: &RunConfig, backend: &Option<Arc<dyn ChatBackend>>) -> Result<Arc<dyn Judge>> {
    Ok(match cfg.judge {
        JudgeKind::Exact => Arc::new(ExactMatchJudge),
        JudgeKind::Remote => Arc::new(RemoteJudge::new(need_backend(backend, "the remote judge")?)),
    })
}

fn make_summarizer(cfg: &RunConfig, backend: &Option<Arc<dyn ChatBackend>>) -> Result<Arc<dyn Summarizer>> {
    Ok(match cfg.summarizer {
        SummarizerKind::Extractive => Arc::new(ExtractiveSummarizer::new(cfg.summary_bound)),
        SummarizerKind::Remote => {
            Arc::new(RemoteSummarizer::new(need_backend(backend, "the remote summarizer")?, cfg.summary_bound))
        }
    })
}

fn load_tasks(path: &Path) -> Result<Vec<TaskInstance>> {
    let tasks: Vec<TaskInstance> = io::read_jsonl(path, io::TASKS_SCHEMA, RECORD_VERSION)?;
    for t in &tasks {
        t.validate()?;
    }
    Ok(tasks)
}

fn world_for(task: &TaskInstance) -> Result<World> {
    let r = task
        .world_ref
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("task `{}` has no simulated world", task.task_id)))?;
    let world = World::from_ref(r)?;
    if world.task() != *task {
        return Err(Error::InvalidConfig(format!("task `{}` does not match its world", task.task_id)));
    }
    Ok(world)
}

fn finish(name: &str, cfg: &RunConfig, primary: &Path, outputs: &[PathBuf], runtime: serde_json::Value) -> Result<()> {
    let mut m = Manifest::new(name, cfg.to_value());
    for p in outputs {
        m.add_output(p)?;
    }
    m.runtime = Some(runtime);
    let path = m.write(primary)?;
    eprintln!("wrote {} (manifest {})", primary.display(), path.display());
    Ok(())
}

fn sibling(primary: &Path, suffix: &str) -> PathBuf {
    let mut s = primary.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn world_gen(cfg: &RunConfig) -> Result<i32> {
    let dir = cfg.require(&cfg.out, "out")?;
    let mut tasks = Vec::new();
    let mut outputs = Vec::new();
    for i in 0..cfg.count as u64 {
        let spec = WorldSpec {
            seed: cfg.seed + i,
            num_entities: cfg.entities.unwrap_or(2 * cfg.hops + 4),
            hop_depth: cfg.hops,
            branching: cfg.branching,
            noise_pages: cfg.noise_pages.unwrap_or(4),
        };
        let (world, task) = generate_world(&spec)?;
        let path = dir.join(format!("world-{}.json", task.task_id));
        io::write_text(&path, &world.to_bundle())?;
        outputs.push(path);
        tasks.push(task);
    }
    let tasks_path = dir.join("tasks.jsonl");
    io::write_jsonl(&tasks_path, io::TASKS_SCHEMA, RECORD_VERSION, &tasks)?;
    outputs.insert(0, tasks_path.clone());
    finish("world gen", cfg, &tasks_path, &outputs, serde_json::json!({"worlds": tasks.len()}))?;
    Ok(EXIT_OK)
}

fn annotate(cfg: &RunConfig) -> Result<i32> {
    let out = cfg.require(&cfg.out, "out")?;
    let tasks = load_tasks(cfg.require(&cfg.tasks, "tasks")?)?;
    let backend = make_backend(cfg)?;
    let judge = make_judge(cfg, &backend)?;
    let start = Instant::now();
    let profile = AgentProfile { guess_prob: cfg.guess_prob };
    let chains = tasks
        .par_iter()
        .map(|task| {
            let world = world_for(task)?;
            let policy: Box<dyn Policy> = match cfg.policy {
                PolicyKind::Scripted => Box::new(ScriptedPolicy::for_world(&world, profile)),
                PolicyKind::Remote => {
                    Box::new(RemotePolicy::new(need_backend(&backend, "the remote policy")?, "agent"))
                }
            };
            let mut annotator = Annotator::new(&world, policy.as_ref(), judge.as_ref(), cfg.m_rollouts);
            if let Some(b) = cfg.rollout_budget {
                annotator = annotator.with_budget(b);
            }
            annotator.chain_annotate(cfg.max_pairs, cfg.seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<PairRecord> = chains.iter().flat_map(|c| c.pairs.iter().map(|p| p.to_record())).collect();
    records.sort_by(|a, b| (&a.task_id, a.t).cmp(&(&b.task_id, b.t)));
    let mut prefixes: Vec<&Trajectory> = chains.iter().map(|c| &c.trajectory).collect();
    prefixes.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    io::write_jsonl(out, PAIR_SCHEMA, PAIR_SCHEMA_VERSION, &records)?;
    let prefix_path = sibling(out, ".prefixes.jsonl");
    io::write_jsonl(&prefix_path, io::TRAJECTORIES_SCHEMA, RECORD_VERSION, &prefixes)?;
    let filtered: usize = chains.iter().map(|c| c.filtered).sum();
    eprintln!("{} pair(s) from {} task(s); {} filtered", records.len(), tasks.len(), filtered);
    finish(
        "annotate",
        cfg,
        out,
        &[out.to_path_buf(), prefix_path],
        serde_json::json!({"millis": start.elapsed().as_millis(), "pairs": records.len(), "filtered": filtered}),
    )?;
    Ok(EXIT_OK)
}

/// One scorer generation for one side of a pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub pair_id: String,
    pub side: Side,
    /// Raw generation ending in a `Score:` line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<String>,
    /// Predicted score, when no generation text is supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_hat: Option<f64>,
}

fn rewards(cfg: &RunConfig) -> Result<i32> {
    let out = cfg.require(&cfg.out, "out")?;
    let pairs: Vec<PairRecord> = io::read_jsonl(cfg.require(&cfg.pairs, "pairs")?, PAIR_SCHEMA, PAIR_SCHEMA_VERSION)?;
    let preds: Vec<PredictionRecord> =
        io::read_jsonl(cfg.require(&cfg.predictions, "predictions")?, io::PREDICTIONS_SCHEMA, RECORD_VERSION)?;
    let mut groups: BTreeMap<String, (Vec<ScorerRollout>, Vec<ScorerRollout>)> = BTreeMap::new();
    for p in &preds {
        let m = pairs
            .iter()
            .find(|r| format!("{}:{}", r.task_id, r.t) == p.pair_id)
            .map(|r| r.m_rollouts)
            .ok_or_else(|| Error::InvalidConfig(format!("prediction for unknown pair `{}`", p.pair_id)))?;
        let rollout = match (&p.generation, p.g_hat) {
            (Some(text), _) => ScorerRollout::from_generation(p.side, text, m)?,
            (None, Some(v)) => ScorerRollout::from_value(p.side, v, m)?,
            (None, None) => {
                return Err(Error::schema("generation", format!("prediction for `{}` is empty", p.pair_id)))
            }
        };
        let g = groups.entry(p.pair_id.clone()).or_default();
        match p.side {
            Side::Winner => g.0.push(rollout),
            Side::Loser => g.1.push(rollout),
        }
    }
    let mut records = Vec::new();
    for pair in &pairs {
        let id = format!("{}:{}", pair.task_id, pair.t);
        let Some((w, l)) = groups.get(&id) else { continue };
        records.extend(reward_records(&id, pair.winner.g, pair.loser.g, pair.m_rollouts, w, l, cfg.with_advantages)?);
    }
    io::write_jsonl(out, io::REWARDS_SCHEMA, RECORD_VERSION, &records)?;
    finish("rewards", cfg, out, &[out.to_path_buf()], serde_json::json!({"records": records.len()}))?;
    Ok(EXIT_OK)
}

/// Scorer input for both sides of an annotated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerInputRecord {
    pub pair_id: String,
    pub winner_input: String,
    pub loser_input: String,
    pub g_plus: f64,
    pub g_minus: f64,
    #[serde(rename = "M")]
    pub m_rollouts: usize,
}

fn export(cfg: &RunConfig) -> Result<i32> {
    let dir = cfg.require(&cfg.out, "out")?;
    let tasks = load_tasks(cfg.require(&cfg.tasks, "tasks")?)?;
    let queries: BTreeMap<&str, &str> = tasks.iter().map(|t| (t.task_id.as_str(), t.query.as_str())).collect();
    let trajs: Vec<Trajectory> =
        io::read_jsonl(cfg.require(&cfg.trajectories, "trajectories")?, io::TRAJECTORIES_SCHEMA, RECORD_VERSION)?;
    let backend = make_backend(cfg)?;
    let summarizer = make_summarizer(cfg, &backend)?;
    let query_of = |id: &str| {
        queries.get(id).copied().ok_or_else(|| Error::InvalidConfig(format!("trajectory for unknown task `{id}`")))
    };
    let per_traj = trajs
        .par_iter()
        .map(|traj| {
            let q = query_of(&traj.task_id)?;
            let summaries = summarize_trajectory(summarizer.as_ref(), q, traj)?;
            let mut prev = Summary::empty();
            let mut prev_response = None;
            let mut sft = Vec::new();
            for (step, h) in traj.steps().iter().zip(&summaries) {
                sft.push(emit_sft_record(q, &prev, prev_response, step, h));
                prev = h.clone();
                prev_response = step.response.as_deref();
            }
            Ok((sft, summaries))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cache = SummaryCache::default();
    let mut sft = Vec::new();
    for (traj, (records, summaries)) in trajs.iter().zip(per_traj) {
        sft.extend(records);
        for s in summaries {
            cache.insert(&traj.task_id, s);
        }
    }
    let sft_path = dir.join("summary_sft.jsonl");
    io::write_jsonl(&sft_path, io::SFT_SCHEMA, RECORD_VERSION, &sft)?;
    let cache_path = dir.join("summary_cache.jsonl");
    let mut buf = io::header_line(io::SUMMARY_CACHE_SCHEMA, RECORD_VERSION).into_bytes();
    buf.push(b'\n');
    cache.write_to(&mut buf)?;
    std::fs::write(&cache_path, buf)?;
    let mut outputs = vec![sft_path.clone(), cache_path];
    if let Some(pairs_path) = &cfg.pairs {
        let pairs: Vec<PairRecord> = io::read_jsonl(pairs_path, PAIR_SCHEMA, PAIR_SCHEMA_VERSION)?;
        let chains: BTreeMap<&str, &Trajectory> = trajs.iter().map(|t| (t.task_id.as_str(), t)).collect();
        let mut inputs = Vec::new();
        for rec in &pairs {
            let chain = chains
                .get(rec.task_id.as_str())
                .ok_or_else(|| Error::InvalidConfig(format!("no trajectory for pair task `{}`", rec.task_id)))?;
            let pair = rec.resolve(chain)?;
            let task = tasks.iter().find(|t| t.task_id == rec.task_id).expect("task checked above");
            let h = match pair.prefix.len() {
                0 => Summary::empty(),
                t => cache.get(&rec.task_id, t).cloned().unwrap_or_else(Summary::empty),
            };
            let context = render_context(&pair.prefix, Some(&h), ContextMode::Summary)?;
            let prompt = |side: &crate::annotate::PairSide| {
                let cand = crate::policy::CandidateStep::new(side.step.reasoning.clone(), side.step.action.clone());
                render_scoring_prompt(&ScoreRequest {
                    task,
                    prefix: &pair.prefix,
                    context: &context,
                    prev_response: pair.prefix.last_response(),
                    candidate: &cand,
                })
            };
            inputs.push(ScorerInputRecord {
                pair_id: pair.pair_id(),
                winner_input: prompt(&pair.winner),
                loser_input: prompt(&pair.loser),
                g_plus: pair.winner.gain.g,
                g_minus: pair.loser.gain.g,
                m_rollouts: rec.m_rollouts,
            });
        }
        let p = dir.join("scorer_inputs.jsonl");
        io::write_jsonl(&p, "infogain/scorer-inputs", RECORD_VERSION, &inputs)?;
        outputs.push(p);
    }
    finish("export", cfg, &sft_path, &outputs, serde_json::json!({"sft_records": sft.len()}))?;
    Ok(EXIT_OK)
}

fn make_harness(cfg: &RunConfig) -> Result<Harness> {
    let backend = make_backend(cfg)?;
    let mut h = Harness::new(cfg.scorer)
        .with_profile(AgentProfile { guess_prob: cfg.guess_prob })
        .with_policy(cfg.policy)
        .with_summarizer(make_summarizer(cfg, &backend)?);
    h.m_rollouts = cfg.m_rollouts;
    h.judge = make_judge(cfg, &backend)?;
    if let Some(b) = backend {
        h = h.with_backend(b);
    }
    h.validate()?;
    Ok(h)
}

fn search_run(cfg: &RunConfig) -> Result<i32> {
    let out = cfg.require(&cfg.out, "out")?;
    let tasks = load_tasks(cfg.require(&cfg.tasks, "tasks")?)?;
    let harness = make_harness(cfg)?;
    let start = Instant::now();
    let results = tasks
        .par_iter()
        .map(|task| {
            let world = harness.world(task)?;
            let config = SearchConfig {
                n: cfg.n,
                max_steps: cfg.max_steps.unwrap_or_else(|| world.spec.default_budget()),
                context_mode: cfg.context_mode,
                seed: cfg.seed,
            };
            harness.episode(task, &config)
        })
        .collect::<Result<Vec<_>>>()?;
    io::write_jsonl(out, EPISODE_SCHEMA, EPISODE_SCHEMA_VERSION, &results)?;
    let correct = results.iter().filter(|r| r.correct).count();
    eprintln!("{correct}/{} episode(s) correct", results.len());
    finish("search run", cfg, out, &[out.to_path_buf()], serde_json::json!({"millis": start.elapsed().as_millis()}))?;
    let failures = results.iter().filter(|r| r.scorer_failures() > 0).count();
    if failures > 0 {
        eprintln!("{failures} episode(s) hit a backend failure");
        return Ok(EXIT_BACKEND);
    }
    Ok(EXIT_OK)
}

enum Run {
    Bench,
    SweepN,
    Context,
}

fn load_suite(cfg: &RunConfig) -> Result<BenchmarkSuite> {
    let mut suite = match (&cfg.suite, &cfg.tasks) {
        (Some(p), _) => serde_json::from_str::<BenchmarkSuite>(&std::fs::read_to_string(p)?)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?,
        (None, Some(p)) => {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "tasks".into());
            BenchmarkSuite::new(id, load_tasks(p)?)
        }
        (None, None) => return Err(Error::InvalidConfig("missing required path `suite` or `tasks`".into())),
    };
    if let Some(k) = cfg.runs_per_task {
        suite.runs_per_task = k;
    }
    Ok(suite)
}

fn bench(cfg: &RunConfig, kind: Run) -> Result<i32> {
    let out = cfg.require(&cfg.out, "out")?;
    let suite = load_suite(cfg)?;
    let harness = make_harness(cfg)?;
    let settings = RunSettings { n: cfg.n, max_steps: cfg.max_steps, context_mode: cfg.context_mode, seed: cfg.seed };
    let (report, stats) = match kind {
        Run::Bench => run_benchmark(&suite, &harness, &settings)?,
        Run::SweepN => sweep_n(&suite, &harness, &settings, &cfg.n_values)?,
        Run::Context => ablate_context_modes(&suite, &harness, &settings, &cfg.context_modes)?,
    };
    write_report(cfg, out, &report, serde_json::to_value(&stats)?)?;
    let violations = report.violations(&suite.thresholds);
    for v in &violations {
        eprintln!("threshold violated: {v}");
    }
    let failures = report.backend_failures();
    if failures > 0 {
        eprintln!("{failures} episode(s) hit a backend failure");
        return Ok(EXIT_BACKEND);
    }
    Ok(if violations.is_empty() { EXIT_OK } else { EXIT_INVALID })
}

fn write_report(cfg: &RunConfig, out: &Path, report: &Report, runtime: serde_json::Value) -> Result<()> {
    io::write_text(out, &report.to_jsonl())?;
    let table = sibling(out, ".txt");
    io::write_text(&table, &format!("# infogain/report-table v1\n{}", report.render_table()))?;
    print!("{}", report.render_table());
    finish("bench", cfg, out, &[out.to_path_buf(), table], runtime)
}
