//! Step-level preference annotation from Monte-Carlo rollouts.
//!
//! The mean accuracy `m` of a prefix is the fraction of `M` policy rollouts
//! from it that end in a correct answer. A step's gain is
//! `g = (m_after − m_before) · M/2`. Pairs are built from the first steps of
//! the baseline rollouts, re-annotated from their own prefixes, and relabeled
//! so the side with the higher gain wins. The true winner then extends the
//! prefix for the next pair.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::judge::Judge;
use crate::policy::{CandidateStep, Policy};
use crate::seed;
use crate::trajectory::{render_context, ContextMode, TaskInstance, ToolCall, TrajStep, Trajectory};
use crate::world::World;

pub const PAIR_SCHEMA: &str = "infogain/pairs";
pub const PAIR_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_STEPWISE_THRESHOLD: f64 = 0.7;

pub fn info_gain(m_prev: f64, m_curr: f64, m: usize) -> f64 {
    (m_curr - m_prev) * m as f64 / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainAnnotation {
    pub m_prev: f64,
    pub m_curr: f64,
    #[serde(rename = "M")]
    pub m_rollouts: usize,
    pub g: f64,
}

impl GainAnnotation {
    pub fn new(m_prev: f64, m_curr: f64, m_rollouts: usize) -> Self {
        GainAnnotation { m_prev, m_curr, m_rollouts, g: info_gain(m_prev, m_curr, m_rollouts) }
    }

    /// Too easy (`m = 1`) or too hard (`m = 0`) to carry a training signal.
    pub fn is_degenerate(&self) -> bool {
        self.m_curr == 0.0 || self.m_curr == 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    /// First step taken after the prefix; absent when the prefix had already
    /// used the whole step budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_step: Option<CandidateStep>,
    pub trajectory: Trajectory,
    pub success: bool,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub m: f64,
    pub successes: usize,
    pub rollouts: Vec<RolloutRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSide {
    pub step: TrajStep,
    pub gain: GainAnnotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub task_id: String,
    pub prefix: Trajectory,
    pub winner: PairSide,
    pub loser: PairSide,
    pub provisional_winner_flipped: bool,
}

impl PreferencePair {
    /// Step index of the two candidates.
    pub fn t(&self) -> usize {
        self.prefix.len() + 1
    }

    pub fn pair_id(&self) -> String {
        format!("{}:{}", self.task_id, self.t())
    }

    pub fn to_record(&self) -> PairRecord {
        let side = |s: &PairSide| SideRecord {
            reasoning: s.step.reasoning.clone(),
            tool: s.step.action.tool.clone(),
            args: s.step.action.args.clone(),
            m: s.gain.m_curr,
            g: s.gain.g,
        };
        PairRecord {
            task_id: self.task_id.clone(),
            t: self.t(),
            prefix_ref: prefix_ref(&self.task_id, self.prefix.len()),
            winner: side(&self.winner),
            loser: side(&self.loser),
            m_prev: self.winner.gain.m_prev,
            m_rollouts: self.winner.gain.m_rollouts,
            flipped: self.provisional_winner_flipped,
        }
    }
}

pub fn prefix_ref(task_id: &str, len: usize) -> String {
    format!("{task_id}:{len}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideRecord {
    pub reasoning: String,
    pub tool: String,
    pub args: std::collections::BTreeMap<String, String>,
    pub m: f64,
    pub g: f64,
}

impl SideRecord {
    pub fn action(&self) -> ToolCall {
        ToolCall { tool: self.tool.clone(), args: self.args.clone() }
    }
}

/// One line of a pair file. `prefix_ref` is `"{task_id}:{len}"`, naming the
/// first `len` steps of that task's chain trajectory in the prefix file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub task_id: String,
    pub t: usize,
    pub prefix_ref: String,
    pub winner: SideRecord,
    pub loser: SideRecord,
    pub m_prev: f64,
    #[serde(rename = "M")]
    pub m_rollouts: usize,
    pub flipped: bool,
}

impl PairRecord {
    /// Rebuilds the full pair given the task's chain trajectory.
    pub fn resolve(&self, chain: &Trajectory) -> Result<PreferencePair> {
        let len = self
            .prefix_ref
            .rsplit_once(':')
            .and_then(|(id, n)| (id == self.task_id).then_some(n))
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| Error::schema("prefix_ref", format!("malformed reference `{}`", self.prefix_ref)))?;
        if chain.task_id != self.task_id || len > chain.len() || len + 1 != self.t {
            return Err(Error::schema("prefix_ref", format!("`{}` does not index the chain", self.prefix_ref)));
        }
        let prefix = chain.truncated(len);
        let side = |s: &SideRecord| PairSide {
            step: TrajStep::new(self.t, s.reasoning.clone(), s.action()),
            gain: GainAnnotation { m_prev: self.m_prev, m_curr: s.m, m_rollouts: self.m_rollouts, g: s.g },
        };
        Ok(PreferencePair {
            task_id: self.task_id.clone(),
            prefix,
            winner: side(&self.winner),
            loser: side(&self.loser),
            provisional_winner_flipped: self.flipped,
        })
    }
}

/// Provisional winner and loser first steps, with the rollouts they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePair {
    pub winner: CandidateStep,
    pub loser: CandidateStep,
    pub winner_rollout: usize,
    pub loser_rollout: usize,
}

fn same_step(a: &CandidateStep, b: &CandidateStep) -> bool {
    a.reasoning == b.reasoning && a.action == b.action
}

/// Winner: first step of the shortest successful rollout (lowest index on
/// ties). Loser: a uniform draw over the other `M − 1` rollouts. `None` when
/// nothing succeeded or every first step is the same.
pub fn build_candidate_pair(rollouts: &[RolloutRecord], seed: u64) -> Option<CandidatePair> {
    if rollouts.len() < 2 {
        return None;
    }
    let firsts: Vec<&CandidateStep> = rollouts.iter().map(|r| r.first_step.as_ref()).collect::<Option<_>>()?;
    if firsts.iter().all(|s| same_step(s, firsts[0])) {
        return None;
    }
    let (wi, _) = rollouts.iter().enumerate().filter(|(_, r)| r.success).min_by_key(|(i, r)| (r.length, *i))?;
    let mut rng = seed::rng(seed);
    let k = rng.gen_range(0..rollouts.len() - 1);
    let li = if k >= wi { k + 1 } else { k };
    Some(CandidatePair { winner: firsts[wi].clone(), loser: firsts[li].clone(), winner_rollout: wi, loser_rollout: li })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedPair {
    pub pair: PreferencePair,
    /// Either side reached `m ∈ {0, 1}`; the pair is not emitted.
    pub filtered: bool,
    /// Executed prefix and estimate behind the true winner.
    pub winner_prefix: Trajectory,
    pub winner_estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainStop {
    NoPair,
    Terminal,
    Budget,
    MaxPairs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub pairs: Vec<PreferencePair>,
    /// Prefix reached when the chain stopped; every pair's prefix is a
    /// truncation of it.
    pub trajectory: Trajectory,
    pub filtered: usize,
    pub stop: ChainStop,
}

/// Everything one annotation run needs about the task being annotated.
pub struct Annotator<'a> {
    pub world: &'a World,
    pub task: TaskInstance,
    pub policy: &'a dyn Policy,
    pub judge: &'a dyn Judge,
    /// Absolute horizon on trajectory length for rollouts.
    pub budget: usize,
    pub m_rollouts: usize,
}

impl<'a> Annotator<'a> {
    pub fn new(world: &'a World, policy: &'a dyn Policy, judge: &'a dyn Judge, m_rollouts: usize) -> Self {
        Annotator { world, task: world.task(), policy, judge, budget: world.spec.default_budget(), m_rollouts }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    fn rollout(&self, prefix: &Trajectory, seed: u64) -> Result<RolloutRecord> {
        let mut traj = prefix.clone();
        let mut first = None;
        let enumerable = self.policy.as_scripted().is_some();
        while !traj.is_terminal() && traj.len() < self.budget {
            let context = if enumerable { String::new() } else { render_context(&traj, None, ContextMode::Full)? };
            let step = self
                .policy
                .propose(&self.task, &traj, &context, 1, seed)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::ParseFailure("policy returned no candidate".into()))?;
            self.world.step(&mut traj, &step.reasoning, &step.action)?;
            first.get_or_insert(step);
        }
        let success = match traj.terminal_answer() {
            Some(a) => self.judge.judge(a, &self.task.gold_answer)?,
            None => false,
        };
        Ok(RolloutRecord { first_step: first, length: traj.len(), trajectory: traj, success })
    }

    /// Runs `M` rollouts from `prefix`; rollout `j` draws from
    /// `rollout_seed(seed, j)`. Rollouts that hit the budget count as failures.
    pub fn estimate_mean_accuracy(&self, prefix: &Trajectory, seed: u64) -> Result<Estimate> {
        if self.m_rollouts == 0 {
            return Err(Error::InvalidConfig("M must be >= 1".into()));
        }
        if prefix.is_terminal() {
            return Err(Error::AfterTerminal);
        }
        let rollouts = (0..self.m_rollouts as u64)
            .into_par_iter()
            .map(|j| self.rollout(prefix, seed::rollout_seed(seed, j)))
            .collect::<Result<Vec<_>>>()?;
        let successes = rollouts.iter().filter(|r| r.success).count();
        Ok(Estimate { m: successes as f64 / self.m_rollouts as f64, successes, rollouts })
    }

    /// Re-annotates both provisional candidates from `prefix` against the
    /// shared baseline `m_prev` and relabels by gain.
    pub fn annotate_pair(
        &self,
        prefix: &Trajectory,
        m_prev: f64,
        candidates: &CandidatePair,
        seed: u64,
    ) -> Result<AnnotatedPair> {
        let side = |c: &CandidateStep| -> Result<(Trajectory, Estimate)> {
            let mut p = prefix.clone();
            self.world.step(&mut p, &c.reasoning, &c.action)?;
            let est = self.estimate_mean_accuracy_or_terminal(&p, seed)?;
            Ok((p, est))
        };
        let (a, b) = rayon::join(|| side(&candidates.winner), || side(&candidates.loser));
        let (pa, ea) = a?;
        let (pb, eb) = b?;
        let ga = GainAnnotation::new(m_prev, ea.m, self.m_rollouts);
        let gb = GainAnnotation::new(m_prev, eb.m, self.m_rollouts);
        let flipped = gb.g > ga.g;
        let mk = |p: &Trajectory, gain| {
            let mut step = p.steps()[prefix.len()].clone();
            step.response = None;
            PairSide { step, gain }
        };
        let (winner, loser, winner_prefix, winner_estimate) =
            if flipped { (mk(&pb, gb), mk(&pa, ga), pb, eb) } else { (mk(&pa, ga), mk(&pb, gb), pa, ea) };
        let filtered = winner.gain.is_degenerate() || loser.gain.is_degenerate();
        Ok(AnnotatedPair {
            pair: PreferencePair {
                task_id: self.task.task_id.clone(),
                prefix: prefix.clone(),
                winner,
                loser,
                provisional_winner_flipped: flipped,
            },
            filtered,
            winner_prefix,
            winner_estimate,
        })
    }

    /// A terminal prefix has a known outcome; score it without rollouts.
    fn estimate_mean_accuracy_or_terminal(&self, prefix: &Trajectory, seed: u64) -> Result<Estimate> {
        match prefix.terminal_answer() {
            Some(a) => {
                let ok = self.judge.judge(a, &self.task.gold_answer)?;
                let record =
                    RolloutRecord { first_step: None, trajectory: prefix.clone(), success: ok, length: prefix.len() };
                Ok(Estimate {
                    m: if ok { 1.0 } else { 0.0 },
                    successes: if ok { self.m_rollouts } else { 0 },
                    rollouts: vec![record; self.m_rollouts],
                })
            }
            None => self.estimate_mean_accuracy(prefix, seed),
        }
    }

    /// Seed for every estimate made at prefix length `len`.
    fn level_seed(&self, seed: u64, len: usize) -> u64 {
        seed::combine(&[seed, seed::fnv1a(self.task.task_id.as_bytes()), len as u64])
    }

    /// Builds, annotates, and chains pairs from the empty prefix. Filtered
    /// pairs still advance the chain with their higher-gain side.
    pub fn chain_annotate(&self, max_pairs: usize, seed: u64) -> Result<Chain> {
        if max_pairs == 0 {
            return Err(Error::InvalidConfig("max_pairs must be >= 1".into()));
        }
        if self.m_rollouts < 2 {
            return Err(Error::InvalidConfig("pair construction needs M >= 2".into()));
        }
        let mut prefix = Trajectory::new(self.task.task_id.clone());
        let mut baseline = self.estimate_mean_accuracy(&prefix, self.level_seed(seed, 0))?;
        let mut pairs = Vec::new();
        let mut filtered = 0;
        let stop = loop {
            if pairs.len() >= max_pairs {
                break ChainStop::MaxPairs;
            }
            if prefix.is_terminal() {
                break ChainStop::Terminal;
            }
            if prefix.len() >= self.budget {
                break ChainStop::Budget;
            }
            let pick_seed = seed::combine(&[self.level_seed(seed, prefix.len()), 0x6c6f_7365]);
            let Some(candidates) = build_candidate_pair(&baseline.rollouts, pick_seed) else {
                break ChainStop::NoPair;
            };
            let next_seed = self.level_seed(seed, prefix.len() + 1);
            let annotated = self.annotate_pair(&prefix, baseline.m, &candidates, next_seed)?;
            if annotated.filtered {
                filtered += 1;
            } else {
                pairs.push(annotated.pair);
            }
            prefix = annotated.winner_prefix;
            baseline = annotated.winner_estimate;
        };
        Ok(Chain { pairs, trajectory: prefix, filtered, stop })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Pos,
    Neg,
}

/// Positive iff `m_curr / m_prev` exceeds `threshold`.
pub fn binary_label(ann: &GainAnnotation, threshold: f64) -> Result<BinaryLabel> {
    if ann.m_prev == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok(if ann.m_curr / ann.m_prev > threshold { BinaryLabel::Pos } else { BinaryLabel::Neg })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledStep {
    pub index: usize,
    /// `None` when the baseline accuracy was zero and the step was skipped.
    pub label: Option<BinaryLabel>,
    pub zero_baseline: bool,
}

pub fn binary_relabel(annotations: &[GainAnnotation], threshold: f64) -> Vec<LabeledStep> {
    annotations
        .iter()
        .enumerate()
        .map(|(index, a)| match binary_label(a, threshold) {
            Ok(l) => LabeledStep { index, label: Some(l), zero_baseline: false },
            Err(_) => LabeledStep { index, label: None, zero_baseline: true },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::ExactMatchJudge;
    use crate::policy::{AgentProfile, ScriptedPolicy};
    use crate::world::{generate_world, WorldSpec};

    fn rec(first: &str, success: bool, length: usize) -> RolloutRecord {
        RolloutRecord {
            first_step: Some(CandidateStep::new(first, ToolCall::search(first))),
            trajectory: Trajectory::new("t"),
            success,
            length,
        }
    }

    #[test]
    fn gain_examples() {
        assert_eq!(info_gain(0.5, 0.5, 8), 0.0);
        assert_eq!(info_gain(0.25, 0.75, 8), 2.0);
        assert_eq!(info_gain(1.0, 0.0, 8), -4.0);
    }

    #[test]
    fn shortest_success_wins() {
        let rs = vec![rec("a", false, 1), rec("b", true, 3), rec("c", true, 2), rec("d", true, 5)];
        let p = build_candidate_pair(&rs, 1).unwrap();
        assert_eq!(p.winner_rollout, 2);
        assert_ne!(p.loser_rollout, 2);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let rs = vec![rec("a", false, 1), rec("b", true, 2), rec("c", false, 2), rec("d", false, 1), rec("e", true, 2)];
        assert_eq!(build_candidate_pair(&rs, 9).unwrap().winner_rollout, 1);
    }

    #[test]
    fn no_pair_cases() {
        assert!(build_candidate_pair(&[rec("a", false, 1), rec("b", false, 1)], 0).is_none());
        assert!(build_candidate_pair(&[rec("a", true, 1), rec("a", false, 1)], 0).is_none());
    }

    #[test]
    fn loser_is_uniform_over_the_rest() {
        let rs: Vec<_> = (0..4).map(|i| rec(&i.to_string(), i == 0, 1)).collect();
        let mut counts = [0usize; 4];
        for s in 0..4000 {
            counts[build_candidate_pair(&rs, s).unwrap().loser_rollout] += 1;
        }
        assert_eq!(counts[0], 0);
        for c in &counts[1..] {
            assert!((*c as f64 / 4000.0 - 1.0 / 3.0).abs() < 0.03, "{counts:?}");
        }
    }

    #[test]
    fn relabel_examples() {
        let a = GainAnnotation::new(0.5, 0.5, 8);
        assert_eq!(binary_label(&a, 0.7).unwrap(), BinaryLabel::Pos);
        let b = GainAnnotation::new(0.8, 0.4, 8);
        assert_eq!(binary_label(&b, 0.7).unwrap(), BinaryLabel::Neg);
        let c = GainAnnotation::new(0.0, 0.4, 8);
        assert!(matches!(binary_label(&c, 0.7), Err(Error::ZeroBaseline)));
        let all = binary_relabel(&[a, c], 0.7);
        assert!(all[1].zero_baseline && all[1].label.is_none());
    }

    fn setup(seed: u64) -> (World, ScriptedPolicy) {
        let (w, _) = generate_world(&WorldSpec::new(seed, 2, 2)).unwrap();
        let p = ScriptedPolicy::for_world(&w, AgentProfile { guess_prob: 0.1 });
        (w, p)
    }

    #[test]
    fn certain_policies_give_certain_accuracy() {
        let (w, _) = setup(1);
        let right =
            ScriptedPolicy::constant(w.spec.task_id(), CandidateStep::new("", ToolCall::answer(w.gold_answer.clone())));
        let wrong = ScriptedPolicy::constant(w.spec.task_id(), CandidateStep::new("", ToolCall::answer("nobody")));
        let j = ExactMatchJudge;
        let empty = Trajectory::new(w.spec.task_id());
        assert_eq!(Annotator::new(&w, &right, &j, 8).estimate_mean_accuracy(&empty, 3).unwrap().m, 1.0);
        assert_eq!(Annotator::new(&w, &wrong, &j, 8).estimate_mean_accuracy(&empty, 3).unwrap().m, 0.0);
        let chain = Annotator::new(&w, &right, &j, 8).chain_annotate(4, 3).unwrap();
        assert!(chain.pairs.is_empty());
        assert_eq!(chain.stop, ChainStop::NoPair);
    }

    #[test]
    fn chain_invariants_and_records() {
        let j = ExactMatchJudge;
        let mut emitted = 0;
        for s in 0..20 {
            let (w, p) = setup(s);
            let chain = Annotator::new(&w, &p, &j, 8).chain_annotate(8, s).unwrap();
            for pair in &chain.pairs {
                emitted += 1;
                assert!(pair.winner.gain.g >= pair.loser.gain.g);
                assert_eq!(pair.winner.gain.m_prev, pair.loser.gain.m_prev);
                assert!(!pair.winner.gain.is_degenerate() && !pair.loser.gain.is_degenerate());
                assert_eq!((pair.winner.gain.g * 2.0).fract(), 0.0);
                let back = pair.to_record().resolve(&chain.trajectory).unwrap();
                assert_eq!(&back, pair);
            }
        }
        assert!(emitted > 0);
    }

    #[test]
    fn max_pairs_caps_output() {
        let j = ExactMatchJudge;
        for s in 0..10 {
            let (w, p) = setup(s);
            assert!(Annotator::new(&w, &p, &j, 8).chain_annotate(1, s).unwrap().pairs.len() <= 1);
        }
    }

    #[test]
    fn pair_record_rejects_bad_reference() {
        let j = ExactMatchJudge;
        let (w, p) = (0..40)
            .map(setup)
            .find(|(w, p)| !Annotator::new(w, p, &j, 8).chain_annotate(1, 0).unwrap().pairs.is_empty())
            .unwrap();
        let chain = Annotator::new(&w, &p, &j, 8).chain_annotate(1, 0).unwrap();
        let mut r = chain.pairs[0].to_record();
        r.prefix_ref = "other:0".into();
        assert!(r.resolve(&chain.trajectory).is_err());
    }
}
