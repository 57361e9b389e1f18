//! Exact success probability by exhaustive enumeration.
//!
//! The step budget is a horizon on the total trajectory length: a path whose
//! answer would land after step `depth_budget` is a failure. With that
//! convention the probability at a state is exactly the policy-weighted
//! average of the probabilities of its successor states.

use super::World;
use crate::error::{Error, Result};
use crate::policy::{Policy, ScriptedPolicy};
use crate::trajectory::Trajectory;

pub fn exact_success_prob(world: &World, policy: &dyn Policy, prefix: &Trajectory, depth_budget: usize) -> Result<f64> {
    let scripted = policy.as_scripted().ok_or_else(|| Error::NonEnumerablePolicy(policy.id()))?;
    success_prob_with(world, scripted, prefix, depth_budget)
}

pub fn success_prob_with(
    world: &World,
    policy: &ScriptedPolicy,
    prefix: &Trajectory,
    depth_budget: usize,
) -> Result<f64> {
    if depth_budget == 0 {
        return Err(Error::InvalidConfig("depth_budget must be >= 1".into()));
    }
    let mut walk = prefix.clone();
    descend(world, policy, &mut walk, depth_budget)
}

fn descend(world: &World, policy: &ScriptedPolicy, traj: &mut Trajectory, budget: usize) -> Result<f64> {
    if let Some(answer) = traj.terminal_answer() {
        return Ok(if world.is_correct(answer) { 1.0 } else { 0.0 });
    }
    if traj.len() >= budget {
        return Ok(0.0);
    }
    let dist = policy.distribution(traj)?.into_owned();
    let mut total = 0.0;
    for w in &dist {
        world.step(traj, &w.step.reasoning, &w.step.action)?;
        let p = descend(world, policy, traj, budget);
        traj.pop();
        total += w.prob * p?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{AgentProfile, CandidateStep};
    use crate::trajectory::{TaskInstance, ToolCall};
    use crate::world::{generate_world, WorldSpec};

    fn world() -> World {
        generate_world(&WorldSpec::new(7, 2, 2)).unwrap().0
    }

    #[test]
    fn certain_policies() {
        let w = world();
        let id = w.spec.task_id();
        let empty = Trajectory::new(&id);
        let right = ScriptedPolicy::constant(&id, CandidateStep::new("a", ToolCall::answer(&w.gold_answer)));
        let wrong = ScriptedPolicy::constant(&id, CandidateStep::new("a", ToolCall::answer("nobody")));
        assert_eq!(exact_success_prob(&w, &right, &empty, 8).unwrap(), 1.0);
        assert_eq!(exact_success_prob(&w, &wrong, &empty, 8).unwrap(), 0.0);
    }

    #[test]
    fn coin_flip_is_half() {
        let w = world();
        let id = w.spec.task_id();
        let p = ScriptedPolicy::new(&id)
            .with_default(vec![
                (CandidateStep::new("a", ToolCall::answer(&w.gold_answer)), 0.5),
                (CandidateStep::new("b", ToolCall::answer("nobody")), 0.5),
            ])
            .unwrap();
        assert_eq!(exact_success_prob(&w, &p, &Trajectory::new(&id), 8).unwrap(), 0.5);
    }

    #[test]
    fn budget_counts_total_length() {
        let w = world();
        let p = ScriptedPolicy::for_world(&w, AgentProfile { guess_prob: 0.0 });
        let empty = Trajectory::new(w.spec.task_id());
        // Two hops with two pages each: the shortest success takes 5 steps.
        assert_eq!(exact_success_prob(&w, &p, &empty, 4).unwrap(), 0.0);
        // Each hop opens the gold page first with probability 1/2.
        assert!((exact_success_prob(&w, &p, &empty, 5).unwrap() - 0.25).abs() < 1e-15);
        assert!((exact_success_prob(&w, &p, &empty, 7).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn remote_policies_are_rejected() {
        struct Opaque;
        impl Policy for Opaque {
            fn id(&self) -> String {
                "opaque".into()
            }
            fn propose(
                &self,
                _: &TaskInstance,
                _: &Trajectory,
                _: &str,
                _: usize,
                _: u64,
            ) -> Result<Vec<CandidateStep>> {
                unreachable!()
            }
        }
        let w = world();
        let r = exact_success_prob(&w, &Opaque, &Trajectory::new("x"), 4);
        assert!(matches!(r, Err(Error::NonEnumerablePolicy(_))));
    }
}
