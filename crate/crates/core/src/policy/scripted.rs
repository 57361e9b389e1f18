use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CandidateStep, Policy};
use crate::error::{Error, Result};
use crate::seed;
use crate::trajectory::{TaskInstance, ToolCall, Trajectory, TOOL_OPEN, TOOL_SEARCH};
use crate::world::{parse_search_results, World};

const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedStep {
    pub step: CandidateStep,
    pub prob: f64,
}

/// Hash of the task id and the ordered tool calls made so far.
pub fn state_signature<'a>(task_id: &str, actions: impl IntoIterator<Item = &'a ToolCall>) -> u64 {
    let mut buf = String::from(task_id);
    for a in actions {
        buf.push('\u{1f}');
        buf.push_str(&a.to_string());
    }
    seed::fnv1a(buf.as_bytes())
}

fn validate(dist: Vec<(CandidateStep, f64)>) -> Result<Vec<WeightedStep>> {
    let mut total = 0.0;
    let mut out = Vec::with_capacity(dist.len());
    for (step, prob) in dist {
        if !prob.is_finite() || prob < 0.0 {
            return Err(Error::InvalidDistribution(format!("probability {prob} out of range")));
        }
        step.action.validate()?;
        total += prob;
        if prob > 0.0 {
            out.push(WeightedStep { step, prob });
        }
    }
    if out.is_empty() || (total - 1.0).abs() > PROB_TOLERANCE {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {total}, expected 1")));
    }
    Ok(out)
}

/// Index selected by a uniform draw `u` in [0, 1) over `dist`.
pub(crate) fn pick(dist: &[WeightedStep], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in dist.iter().enumerate() {
        acc += w.prob;
        if u < acc {
            return i;
        }
    }
    dist.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentProfile {
    /// Probability, at every undecided state, of answering with the entity
    /// currently in hand instead of continuing to look.
    pub guess_prob: f64,
}

impl Default for AgentProfile {
    fn default() -> Self {
        AgentProfile { guess_prob: 0.1 }
    }
}

/// A rule-based agent for simulated worlds. It follows the query's relation
/// chain: search the current entity, open result pages in uniformly random
/// order until the page stating the needed relation turns up, move on to the
/// entity it names, and answer once every hop is resolved. At any undecided
/// state it may instead commit early to the entity it currently holds.
///
/// The rule only reads the query structure and the observed tool responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRule {
    pub start_entity: String,
    pub relations: Vec<String>,
    pub profile: AgentProfile,
}

struct Knowledge {
    entity: String,
    hop: usize,
    results: Option<Vec<String>>,
    opened: BTreeSet<String>,
}

impl AgentRule {
    pub fn for_world(world: &World, profile: AgentProfile) -> Self {
        AgentRule { start_entity: world.chain_entities[0].clone(), relations: world.relations.clone(), profile }
    }

    fn knowledge(&self, prefix: &Trajectory) -> Knowledge {
        let mut k = Knowledge { entity: self.start_entity.clone(), hop: 0, results: None, opened: BTreeSet::new() };
        for step in prefix.steps() {
            let Some(resp) = step.response.as_deref() else { continue };
            match step.action.tool.as_str() {
                TOOL_SEARCH => {
                    let q = step.action.arg("query").unwrap_or("").trim().to_lowercase();
                    if q == k.entity.to_lowercase() {
                        k.results = Some(parse_search_results(resp).unwrap_or_default());
                    }
                }
                TOOL_OPEN if k.hop < self.relations.len() => {
                    let needle = format!("The {} of {} is ", self.relations[k.hop], k.entity);
                    let found = resp
                        .find(&needle)
                        .and_then(|at| resp[at + needle.len()..].split('.').next().map(str::to_string));
                    match found {
                        Some(next) if !next.is_empty() => {
                            k.entity = next;
                            k.hop += 1;
                            k.results = None;
                            k.opened.clear();
                        }
                        _ => {
                            if let Some(id) = step.action.arg("page_id") {
                                k.opened.insert(id.trim().to_string());
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        k
    }

    pub fn distribution(&self, prefix: &Trajectory) -> Vec<WeightedStep> {
        let k = self.knowledge(prefix);
        let g = self.profile.guess_prob.clamp(0.0, 1.0);
        let w = |step: CandidateStep, prob: f64| WeightedStep { step, prob };
        let certain = |step| vec![w(step, 1.0)];

        if k.hop >= self.relations.len() {
            let reasoning = format!("Every link of the question is resolved. I will answer {}.", k.entity);
            return certain(CandidateStep::new(reasoning, ToolCall::answer(&k.entity)));
        }
        let rel = &self.relations[k.hop];
        let guess = CandidateStep::new(
            format!("I have not found the {rel} of {} yet. I will answer {} now.", k.entity, k.entity),
            ToolCall::answer(&k.entity),
        );
        let mut out = Vec::new();
        match &k.results {
            None => out.push(w(
                CandidateStep::new(
                    format!("I need the {rel} of {}. I will search for {}.", k.entity, k.entity),
                    ToolCall::search(&k.entity),
                ),
                1.0 - g,
            )),
            Some(results) => {
                let unopened: Vec<&String> = results.iter().filter(|id| !k.opened.contains(*id)).collect();
                if unopened.is_empty() {
                    return certain(guess);
                }
                let share = (1.0 - g) / unopened.len() as f64;
                for id in unopened {
                    out.push(w(
                        CandidateStep::new(
                            format!("One of the pages about {} may state its {rel}. I will open {id}.", k.entity),
                            ToolCall::open(id),
                        ),
                        share,
                    ));
                }
            }
        }
        out.push(w(guess, g));
        out.retain(|s| s.prob > 0.0);
        out
    }
}

/// A finite-support policy. Distributions come from an explicit table keyed
/// by [`state_signature`], then from an optional [`AgentRule`], then from an
/// optional default used for every remaining state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub task_id: String,
    #[serde(default)]
    table: BTreeMap<u64, Vec<WeightedStep>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rule: Option<AgentRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default: Option<Vec<WeightedStep>>,
}

impl ScriptedPolicy {
    pub fn new(task_id: impl Into<String>) -> Self {
        ScriptedPolicy { task_id: task_id.into(), table: BTreeMap::new(), rule: None, default: None }
    }

    pub fn for_world(world: &World, profile: AgentProfile) -> Self {
        Self::new(world.spec.task_id()).with_rule(AgentRule::for_world(world, profile))
    }

    /// Same action at every state.
    pub fn constant(task_id: impl Into<String>, step: CandidateStep) -> Self {
        Self::new(task_id).with_default(vec![(step, 1.0)]).expect("a single certain step is a valid distribution")
    }

    pub fn with_state(mut self, actions: &[ToolCall], dist: Vec<(CandidateStep, f64)>) -> Result<Self> {
        let sig = state_signature(&self.task_id, actions);
        self.table.insert(sig, validate(dist)?);
        Ok(self)
    }

    pub fn with_default(mut self, dist: Vec<(CandidateStep, f64)>) -> Result<Self> {
        self.default = Some(validate(dist)?);
        Ok(self)
    }

    pub fn with_rule(mut self, rule: AgentRule) -> Self {
        self.rule = Some(rule);
        self
    }

    pub fn distribution(&self, prefix: &Trajectory) -> Result<Cow<'_, [WeightedStep]>> {
        let sig = state_signature(&self.task_id, prefix.actions());
        if let Some(d) = self.table.get(&sig) {
            return Ok(Cow::Borrowed(d));
        }
        if let Some(rule) = &self.rule {
            return Ok(Cow::Owned(rule.distribution(prefix)));
        }
        if let Some(d) = &self.default {
            return Ok(Cow::Borrowed(d));
        }
        Err(Error::UnknownState(sig))
    }

    /// One draw for step `prefix.len() + 1` with draw index `draw`.
    pub fn sample(&self, prefix: &Trajectory, seed: u64, draw: usize) -> Result<CandidateStep> {
        let dist = self.distribution(prefix)?;
        let t = prefix.len() as u64 + 1;
        let mut rng = seed::rng(seed::sub_seed(seed, &self.task_id, t, draw as u64));
        let u: f64 = rng.gen();
        Ok(dist[pick(&dist, u)].step.clone())
    }
}

impl Policy for ScriptedPolicy {
    fn id(&self) -> String {
        match &self.rule {
            Some(r) => format!("scripted:rule(guess={})", r.profile.guess_prob),
            None => "scripted:table".to_string(),
        }
    }

    fn propose(
        &self,
        _task: &TaskInstance,
        prefix: &Trajectory,
        _context: &str,
        n: usize,
        seed: u64,
    ) -> Result<Vec<CandidateStep>> {
        if n == 0 {
            return Err(Error::InvalidConfig("n must be >= 1".into()));
        }
        (0..n).map(|i| self.sample(prefix, seed, i)).collect()
    }

    fn as_scripted(&self) -> Option<&ScriptedPolicy> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, WorldSpec};

    fn task(id: &str) -> TaskInstance {
        TaskInstance { task_id: id.into(), query: "q".into(), gold_answer: "gold".into(), world_ref: None }
    }

    fn coin(id: &str) -> ScriptedPolicy {
        ScriptedPolicy::new(id)
            .with_default(vec![
                (CandidateStep::new("heads", ToolCall::answer("gold")), 0.5),
                (CandidateStep::new("tails", ToolCall::answer("wrong")), 0.5),
            ])
            .unwrap()
    }

    #[test]
    fn deterministic_state_repeats() {
        let p = ScriptedPolicy::constant("t", CandidateStep::new("go", ToolCall::search("x")));
        let c = p.propose(&task("t"), &Trajectory::new("t"), "", 3, 1).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|s| s == &c[0]));
    }

    #[test]
    fn coin_split_near_half() {
        let p = coin("t");
        let c = p.propose(&task("t"), &Trajectory::new("t"), "", 10_000, 42).unwrap();
        let heads = c.iter().filter(|s| s.reasoning == "heads").count() as f64 / 10_000.0;
        assert!((heads - 0.5).abs() < 0.02, "{heads}");
    }

    #[test]
    fn proposals_replay() {
        let p = coin("t");
        let a = p.propose(&task("t"), &Trajectory::new("t"), "", 16, 9).unwrap();
        let b = p.propose(&task("t"), &Trajectory::new("t"), "ctx differs", 16, 9).unwrap();
        assert_eq!(a, b);
        // A prefix of the draws does not depend on how many were requested.
        let c = p.propose(&task("t"), &Trajectory::new("t"), "", 4, 9).unwrap();
        assert_eq!(&a[..4], &c[..]);
    }

    #[test]
    fn bad_distributions_rejected() {
        let s = CandidateStep::new("a", ToolCall::answer("x"));
        assert!(ScriptedPolicy::new("t").with_default(vec![(s.clone(), 0.7)]).is_err());
        assert!(ScriptedPolicy::new("t").with_default(vec![(s.clone(), 1.2), (s.clone(), -0.2)]).is_err());
        assert!(ScriptedPolicy::new("t").with_default(vec![]).is_err());
        assert!(matches!(ScriptedPolicy::new("t").distribution(&Trajectory::new("t")), Err(Error::UnknownState(_))));
    }

    #[test]
    fn table_entries_override_rule() {
        let (w, _) = generate_world(&WorldSpec::new(1, 2, 2)).unwrap();
        let over = CandidateStep::new("override", ToolCall::answer("x"));
        let p =
            ScriptedPolicy::for_world(&w, AgentProfile::default()).with_state(&[], vec![(over.clone(), 1.0)]).unwrap();
        let d = p.distribution(&Trajectory::new(w.spec.task_id())).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].step, over);
    }

    #[test]
    fn rule_distributions_sum_to_one_along_gold_walk() {
        let (w, _) = generate_world(&WorldSpec::new(4, 3, 3)).unwrap();
        let rule = AgentRule::for_world(&w, AgentProfile { guess_prob: 0.2 });
        let mut tr = Trajectory::new(w.spec.task_id());
        for hop in 0..3 {
            let d = rule.distribution(&tr);
            let total: f64 = d.iter().map(|s| s.prob).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert_eq!(d[0].step.action, ToolCall::search(&w.chain_entities[hop]));
            w.step(&mut tr, "s", &ToolCall::search(&w.chain_entities[hop])).unwrap();
            let d = rule.distribution(&tr);
            assert_eq!(d.len(), 3 + 1);
            w.step(&mut tr, "o", &ToolCall::open(&w.gold_chain[hop].page_id)).unwrap();
        }
        let d = rule.distribution(&tr);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].step.action, ToolCall::answer(&w.gold_answer));
    }

    #[test]
    fn rule_ignores_distractor_pages() {
        let (w, _) = generate_world(&WorldSpec::new(2, 1, 3)).unwrap();
        let rule = AgentRule::for_world(&w, AgentProfile { guess_prob: 0.0 });
        let mut tr = Trajectory::new(w.spec.task_id());
        w.step(&mut tr, "s", &ToolCall::search(&w.chain_entities[0])).unwrap();
        let distractor = w.index[&w.chain_entities[0].to_lowercase()]
            .iter()
            .find(|id| **id != w.gold_chain[0].page_id)
            .unwrap()
            .clone();
        w.step(&mut tr, "o", &ToolCall::open(&distractor)).unwrap();
        let d = rule.distribution(&tr);
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|s| s.step.action.arg("page_id") != Some(distractor.as_str())));
    }

    #[test]
    fn policy_serializes() {
        let (w, _) = generate_world(&WorldSpec::new(1, 2, 2)).unwrap();
        let p = ScriptedPolicy::for_world(&w, AgentProfile::default());
        let s = serde_json::to_string(&p).unwrap();
        let back: ScriptedPolicy = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let c = coin("t");
        let back: ScriptedPolicy = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
