//! Simulated multi-hop information-seeking worlds.
//!
//! A world is a small corpus of pages about generated entities, a keyword
//! index over it, and a gold chain of facts that leads from the query's
//! subject to the answer. Worlds are pure functions of their [`WorldSpec`].

mod gen;
mod oracle;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::judge::normalize_answer;
use crate::trajectory::{TaskInstance, ToolCall, TrajStep, Trajectory, TOOL_ANSWER, TOOL_NOOP, TOOL_OPEN, TOOL_SEARCH};

pub use oracle::{exact_success_prob, success_prob_with};

pub const WORLD_BUNDLE_SCHEMA: &str = "infogain/world-bundle";
pub const WORLD_BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub num_entities: usize,
    pub hop_depth: usize,
    pub branching: usize,
    pub noise_pages: usize,
}

impl WorldSpec {
    pub fn new(seed: u64, hop_depth: usize, branching: usize) -> Self {
        WorldSpec { seed, num_entities: 2 * hop_depth + 4, hop_depth, branching, noise_pages: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop_depth < 1 {
            return Err(Error::InvalidSpec("hop_depth must be >= 1".into()));
        }
        if self.branching < 1 {
            return Err(Error::InvalidSpec("branching must be >= 1".into()));
        }
        if self.num_entities < self.hop_depth + 1 {
            return Err(Error::InvalidSpec(format!(
                "num_entities ({}) must be at least hop_depth + 1 ({})",
                self.num_entities,
                self.hop_depth + 1
            )));
        }
        if self.num_entities > gen::MAX_ENTITIES {
            return Err(Error::InvalidSpec(format!("num_entities must be at most {}", gen::MAX_ENTITIES)));
        }
        Ok(())
    }

    /// Default rollout and episode step budget for tasks in this world.
    pub fn default_budget(&self) -> usize {
        2 * self.hop_depth + 2
    }

    pub fn world_ref(&self) -> String {
        self.to_string()
    }

    pub fn task_id(&self) -> String {
        format!("w{}-h{}b{}e{}n{}", self.seed, self.hop_depth, self.branching, self.num_entities, self.noise_pages)
    }
}

impl fmt::Display for WorldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sim:v1:seed={}:entities={}:hops={}:branching={}:noise={}",
            self.seed, self.num_entities, self.hop_depth, self.branching, self.noise_pages
        )
    }
}

impl FromStr for WorldSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidSpec(format!("malformed world reference `{s}`"));
        let rest = s.strip_prefix("sim:v1:").ok_or_else(bad)?;
        let mut fields = BTreeMap::new();
        for part in rest.split(':') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            fields.insert(k, v.parse::<u64>().map_err(|_| bad())?);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(bad);
        let spec = WorldSpec {
            seed: get("seed")?,
            num_entities: get("entities")? as usize,
            hop_depth: get("hops")? as usize,
            branching: get("branching")? as usize,
            noise_pages: get("noise")? as usize,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLink {
    pub page_id: String,
    pub fact: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct World {
    pub spec: WorldSpec,
    pub query: String,
    pub gold_answer: String,
    /// Entities along the gold chain; the first is the query subject, the
    /// last is the answer.
    pub chain_entities: Vec<String>,
    /// Relation followed at each hop.
    pub relations: Vec<String>,
    pub pages: BTreeMap<String, String>,
    pub index: BTreeMap<String, Vec<String>>,
    pub gold_chain: Vec<GoldLink>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolOutcome {
    pub text: String,
    pub terminal: bool,
}

pub fn generate_world(spec: &WorldSpec) -> Result<(World, TaskInstance)> {
    spec.validate()?;
    let world = gen::build(spec);
    let task = world.task();
    Ok((world, task))
}

/// Formats a fact sentence the way every page states it.
pub fn fact_sentence(relation: &str, subject: &str, object: &str) -> String {
    format!("The {relation} of {subject} is {object}.")
}

/// Formats the search hit list; the inverse is [`parse_search_results`].
fn search_hit_text(ids: &[String]) -> String {
    format!("Found {} page(s): {}", ids.len(), ids.join(", "))
}

/// Page ids listed by a search response, or `None` for a miss.
pub fn parse_search_results(response: &str) -> Option<Vec<String>> {
    let (_, list) = response.strip_prefix("Found ")?.split_once(": ")?;
    Some(list.split(", ").map(str::to_string).collect())
}

pub const NOOP_RESPONSE: &str = "No action was taken.";

impl World {
    pub fn from_ref(world_ref: &str) -> Result<World> {
        let spec: WorldSpec = world_ref.parse()?;
        Ok(generate_world(&spec)?.0)
    }

    pub fn task(&self) -> TaskInstance {
        TaskInstance {
            task_id: self.spec.task_id(),
            query: self.query.clone(),
            gold_answer: self.gold_answer.clone(),
            world_ref: Some(self.spec.world_ref()),
        }
    }

    pub fn execute_tool(&self, call: &ToolCall) -> Result<ToolOutcome> {
        let outcome = match call.tool.as_str() {
            TOOL_SEARCH => {
                let raw = call.arg("query").unwrap_or("");
                let key = raw.trim().to_lowercase();
                match self.index.get(&key) {
                    Some(ids) if !ids.is_empty() => search_hit_text(ids),
                    _ => format!("No results for \"{}\".", raw.trim()),
                }
            }
            TOOL_OPEN => {
                let id = call.arg("page_id").unwrap_or("").trim();
                match self.pages.get(id) {
                    Some(text) => text.clone(),
                    None => format!("Page \"{id}\" not found."),
                }
            }
            TOOL_ANSWER => {
                return Ok(ToolOutcome { text: call.arg("value").unwrap_or("").to_string(), terminal: true })
            }
            TOOL_NOOP => NOOP_RESPONSE.to_string(),
            other => return Err(Error::UnknownTool(other.to_string())),
        };
        Ok(ToolOutcome { text: outcome, terminal: false })
    }

    /// Executes `reasoning`/`action` as the next step of `traj`.
    pub fn step(&self, traj: &mut Trajectory, reasoning: &str, action: &ToolCall) -> Result<()> {
        let outcome = self.execute_tool(action)?;
        let step = TrajStep::new(traj.len() + 1, reasoning, action.clone()).with_response(outcome.text);
        traj.push(step)
    }

    pub fn is_correct(&self, answer: &str) -> bool {
        normalize_answer(answer) == normalize_answer(&self.gold_answer)
    }

    /// A header line naming the schema, then the world as one JSON line.
    pub fn to_bundle(&self) -> String {
        format!(
            "{}\n{}\n",
            crate::io::header_line(WORLD_BUNDLE_SCHEMA, WORLD_BUNDLE_VERSION),
            serde_json::to_string(self).expect("world serializes")
        )
    }

    pub fn from_bundle(text: &str) -> Result<World> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: crate::io::Header =
            serde_json::from_str(lines.next().unwrap_or("")).map_err(|e| Error::schema("header", e.to_string()))?;
        if header.schema != WORLD_BUNDLE_SCHEMA {
            return Err(Error::schema("schema", "not a world bundle"));
        }
        if header.version != WORLD_BUNDLE_VERSION {
            return Err(Error::schema("version", "unsupported world bundle version"));
        }
        let body = lines.next().ok_or_else(|| Error::schema("world", "missing world record"))?;
        let world: World = serde_json::from_str(body).map_err(|e| Error::schema("world", e.to_string()))?;
        world.spec.validate()?;
        Ok(world)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = WorldSpec::new(7, 2, 2);
        let (a, ta) = generate_world(&spec).unwrap();
        let (b, tb) = generate_world(&spec).unwrap();
        assert_eq!(a.to_bundle(), b.to_bundle());
        assert_eq!(ta, tb);
        let (c, _) = generate_world(&WorldSpec::new(8, 2, 2)).unwrap();
        assert_ne!(a.to_bundle(), c.to_bundle());
    }

    #[test]
    fn single_hop_single_branch() {
        let spec = WorldSpec { seed: 3, num_entities: 4, hop_depth: 1, branching: 1, noise_pages: 0 };
        let (w, task) = generate_world(&spec).unwrap();
        let out = w.execute_tool(&ToolCall::search(&w.chain_entities[0])).unwrap();
        let ids = parse_search_results(&out.text).unwrap();
        assert_eq!(ids.len(), 1);
        assert!(w.pages[&ids[0]].contains(&task.gold_answer));
        assert_eq!(w.pages.len(), 1);
    }

    #[test]
    fn too_few_entities_rejected() {
        let spec = WorldSpec { seed: 0, num_entities: 2, hop_depth: 2, branching: 1, noise_pages: 0 };
        assert!(matches!(generate_world(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn tools() {
        let (w, _) = generate_world(&WorldSpec::new(11, 2, 3)).unwrap();
        let first = &w.gold_chain[0];
        let out = w.execute_tool(&ToolCall::open(&first.page_id)).unwrap();
        assert!(out.text.contains(&first.fact));
        assert!(!out.terminal);

        let miss = w.execute_tool(&ToolCall::search("zzz-unindexed")).unwrap();
        assert!(miss.text.starts_with("No results"));
        assert!(!miss.terminal);
        assert!(parse_search_results(&miss.text).is_none());

        let ans = w.execute_tool(&ToolCall::answer("42")).unwrap();
        assert_eq!(ans.text, "42");
        assert!(ans.terminal);

        let nf = w.execute_tool(&ToolCall::open("p999")).unwrap();
        assert!(nf.text.contains("not found"));

        assert!(matches!(w.execute_tool(&ToolCall::new("browse", [])), Err(Error::UnknownTool(_))));
    }

    #[test]
    fn gold_chain_walk_reaches_answer() {
        for seed in 0..30 {
            let spec = WorldSpec::new(seed, 1 + (seed as usize % 3), 1 + (seed as usize % 3));
            let (w, task) = generate_world(&spec).unwrap();
            let mut cur = w.chain_entities[0].clone();
            let mut opens = 0;
            for (hop, rel) in w.relations.iter().enumerate() {
                let res = w.execute_tool(&ToolCall::search(&cur)).unwrap();
                let ids = parse_search_results(&res.text).unwrap();
                assert_eq!(ids.len(), spec.branching);
                assert!(ids.contains(&w.gold_chain[hop].page_id));
                let page = w.execute_tool(&ToolCall::open(&w.gold_chain[hop].page_id)).unwrap();
                opens += 1;
                let prefix = format!("The {rel} of {cur} is ");
                let at = page.text.find(&prefix).unwrap() + prefix.len();
                cur = page.text[at..].split('.').next().unwrap().to_string();
            }
            assert_eq!(opens, spec.hop_depth);
            assert_eq!(cur, task.gold_answer);
        }
    }

    #[test]
    fn distractors_never_mention_answer() {
        for seed in 0..50 {
            let (w, task) = generate_world(&WorldSpec::new(seed, 3, 3)).unwrap();
            let last_gold = &w.gold_chain.last().unwrap().page_id;
            for (id, text) in &w.pages {
                if id != last_gold {
                    assert!(!text.to_lowercase().contains(&task.gold_answer.to_lowercase()));
                }
            }
            assert!(!task.query.contains(&task.gold_answer));
        }
    }

    #[test]
    fn world_ref_round_trip() {
        let spec = WorldSpec::new(99, 3, 2);
        assert_eq!(spec.world_ref().parse::<WorldSpec>().unwrap(), spec);
        let w = World::from_ref(&spec.world_ref()).unwrap();
        assert_eq!(w.spec, spec);
        assert!("sim:v2:seed=1".parse::<WorldSpec>().is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let (w, _) = generate_world(&WorldSpec::new(5, 2, 2)).unwrap();
        assert_eq!(World::from_bundle(&w.to_bundle()).unwrap(), w);
    }
}
