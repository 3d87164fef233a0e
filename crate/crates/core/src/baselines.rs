//! Comparison execution strategies sharing the simulator and skill set:
//! a flat pipeline, a behaviour tree with retry decorators, full-plan
//! regeneration, and the agent architecture with its ablations.
//!
//! The flat, tree and regeneration baselines call the world directly and do
//! not go through the policy runtime.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agent::{plan, run_closed_loop, LoopConfig, Mode, System, TraceEvent, TrialResult};
use crate::ecm::{builtin, Registry};
use crate::error::{AgentError, WorldError};
use crate::runtime::{PolicyConfig, Runtime};
use crate::worldsim::{FailureModel, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoPolicy,
    StaticPlan,
    NoRecovery,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoPolicy, Variant::StaticPlan, Variant::NoRecovery];

    pub fn loop_config(self) -> LoopConfig {
        match self {
            Variant::Full | Variant::NoPolicy => LoopConfig::dynamic(),
            Variant::StaticPlan => LoopConfig { mode: Mode::Static, ..LoopConfig::dynamic() },
            Variant::NoRecovery => LoopConfig::dynamic().with_recovery(false),
        }
    }

    pub fn policy(self) -> PolicyConfig {
        match self {
            Variant::NoPolicy => PolicyConfig::disabled(),
            _ => PolicyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    FlatPipeline,
    BehaviorTreeRetry { k: u32 },
    ReplanK { k: u32 },
    Agent { variant: Variant },
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::FlatPipeline => write!(f, "Flat Pipeline"),
            Strategy::BehaviorTreeRetry { k } => write!(f, "Behavior Tree (retry={k})"),
            Strategy::ReplanK { k } => write!(f, "Plan Regeneration (k={k})"),
            Strategy::Agent { variant: Variant::Full } => write!(f, "Agent (full)"),
            Strategy::Agent { variant: Variant::NoPolicy } => write!(f, "Agent (no policy)"),
            Strategy::Agent { variant: Variant::StaticPlan } => write!(f, "Agent (static plan)"),
            Strategy::Agent { variant: Variant::NoRecovery } => write!(f, "Agent (no recovery)"),
        }
    }
}

fn attempt(world: &mut WorldState, model: &FailureModel, skill: &str, result: &mut TrialResult) -> Result<bool, WorldError> {
    let out = world.apply_skill(skill, model)?;
    result.steps += 1;
    result.trace.push(TraceEvent::Attempt { skill: skill.to_owned(), succeeded: out.succeeded });
    Ok(out.succeeded)
}

fn planned(world: &WorldState, result: &mut TrialResult) -> Vec<String> {
    result.replans += 1;
    let steps: Vec<String> = plan(world.task(), &world.observe()).steps().into_iter().map(|s| s.skill).collect();
    result.trace.push(TraceEvent::Planned { steps: steps.clone() });
    steps
}

fn finish(world: &WorldState, mut result: TrialResult) -> TrialResult {
    result.success = world.is_complete();
    if result.success {
        result.trace.push(TraceEvent::Completed);
    }
    result
}

/// Executes the plan for the starting world once and stops at the first failure.
pub fn run_flat(world: &mut WorldState, model: &FailureModel) -> Result<TrialResult, WorldError> {
    let mut result = TrialResult::default();
    for skill in planned(world, &mut result) {
        if !attempt(world, model, &skill, &mut result)? {
            result.trace.push(TraceEvent::Aborted { skill });
            break;
        }
    }
    Ok(finish(world, result))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    Failure,
    Running,
}

/// Behaviour-tree node with its tick state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BtNode {
    Sequence {
        children: Vec<BtNode>,
        current: usize,
    },
    /// `k` total attempts of the child.
    Retry {
        k: u32,
        attempts: u32,
        child: Box<BtNode>,
    },
    Leaf {
        skill: String,
    },
}

impl BtNode {
    pub fn sequence(children: Vec<BtNode>) -> Self {
        BtNode::Sequence { children, current: 0 }
    }

    pub fn retry(k: u32, child: BtNode) -> Self {
        BtNode::Retry { k, attempts: 0, child: Box::new(child) }
    }

    pub fn leaf(skill: &str) -> Self {
        BtNode::Leaf { skill: skill.to_owned() }
    }

    fn reset(&mut self) {
        match self {
            BtNode::Sequence { children, current } => {
                *current = 0;
                children.iter_mut().for_each(BtNode::reset);
            }
            BtNode::Retry { attempts, child, .. } => {
                *attempts = 0;
                child.reset();
            }
            BtNode::Leaf { .. } => {}
        }
    }

    /// One tick. Runs at most one leaf.
    pub fn tick(&mut self, world: &mut WorldState, model: &FailureModel, result: &mut TrialResult) -> Result<Status, WorldError> {
        match self {
            BtNode::Leaf { skill } => Ok(if attempt(world, model, skill, result)? { Status::Success } else { Status::Failure }),
            BtNode::Retry { k, attempts, child } => match child.tick(world, model, result)? {
                Status::Failure => {
                    *attempts += 1;
                    if *attempts < *k {
                        child.reset();
                        Ok(Status::Running)
                    } else {
                        Ok(Status::Failure)
                    }
                }
                other => Ok(other),
            },
            BtNode::Sequence { children, current } => {
                let Some(child) = children.get_mut(*current) else {
                    return Ok(Status::Success);
                };
                match child.tick(world, model, result)? {
                    Status::Success => {
                        *current += 1;
                        Ok(if *current == children.len() { Status::Success } else { Status::Running })
                    }
                    other => Ok(other),
                }
            }
        }
    }
}

/// Static tree for a world: a sequence over the plan for its starting
/// state, with every failure-prone leaf under a retry decorator.
pub fn build_tree(world: &WorldState, model: &FailureModel, k: u32) -> BtNode {
    let leaves = plan(world.task(), &world.observe())
        .steps()
        .into_iter()
        .map(|s| {
            let leaf = BtNode::leaf(&s.skill);
            if model.is_failable(&s.skill) {
                BtNode::retry(k, leaf)
            } else {
                leaf
            }
        })
        .collect();
    BtNode::sequence(leaves)
}

pub fn run_bt(world: &mut WorldState, model: &FailureModel, k: u32) -> Result<TrialResult, WorldError> {
    assert!(k >= 1, "retry depth must be at least 1");
    let mut result = TrialResult::default();
    let mut tree = build_tree(world, model, k);
    result.replans = 1;
    result.trace.push(TraceEvent::Planned { steps: plan(world.task(), &world.observe()).steps().into_iter().map(|s| s.skill).collect() });
    while tree.tick(world, model, &mut result)? == Status::Running {}
    Ok(finish(world, result))
}

/// Runs the whole current plan; on any failure regenerates it from the
/// current world, for at most `k` plan generations.
pub fn run_replan_k(world: &mut WorldState, model: &FailureModel, k: u32) -> Result<TrialResult, WorldError> {
    assert!(k >= 1, "generation budget must be at least 1");
    let mut result = TrialResult::default();
    for _ in 0..k {
        let steps = planned(world, &mut result);
        let mut failed = false;
        for skill in steps {
            if !attempt(world, model, &skill, &mut result)? {
                result.trace.push(TraceEvent::Aborted { skill });
                failed = true;
                break;
            }
        }
        if !failed {
            break;
        }
    }
    Ok(finish(world, result))
}

/// The agent architecture, or one of its ablations, on a fresh system with
/// the task's package active.
pub fn run_agent(world: &mut WorldState, model: &FailureModel, variant: Variant) -> Result<TrialResult, AgentError> {
    let registry = builtin::registry_with(&[world.task()]).map_err(|_| AgentError::InactiveEcm(world.task()))?;
    run_agent_in(world, model, variant, &registry)
}

pub fn run_agent_in(
    world: &mut WorldState,
    model: &FailureModel,
    variant: Variant,
    registry: &Registry,
) -> Result<TrialResult, AgentError> {
    let mut system = System::new();
    let mut agent = system.spawn_agent("robot")?;
    let mut runtime = Runtime::new(variant.policy());
    run_closed_loop(&mut agent, world, registry, &mut runtime, model, variant.loop_config())
}

pub fn run_strategy(
    strategy: Strategy,
    world: &mut WorldState,
    model: &FailureModel,
    registry: &Registry,
) -> Result<TrialResult, AgentError> {
    Ok(match strategy {
        Strategy::FlatPipeline => run_flat(world, model)?,
        Strategy::BehaviorTreeRetry { k } => run_bt(world, model, k)?,
        Strategy::ReplanK { k } => run_replan_k(world, model, k)?,
        Strategy::Agent { variant } => run_agent_in(world, model, variant, registry)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::{new_world, Predicate, TaskId};

    #[test]
    fn failure_free_everything_succeeds() {
        let m = FailureModel::new();
        for task in TaskId::ALL {
            assert!(run_flat(&mut new_world(task, 0), &m).unwrap().success);
            assert!(run_bt(&mut new_world(task, 0), &m, 3).unwrap().success);
            assert!(run_replan_k(&mut new_world(task, 0), &m, 3).unwrap().success);
            for v in Variant::ALL {
                assert!(run_agent(&mut new_world(task, 0), &m, v).unwrap().success);
            }
        }
    }

    #[test]
    fn tree_shape() {
        let m = FailureModel::evaluation_defaults();
        let t = build_tree(&new_world(TaskId::Dumpling, 0), &m, 3);
        let BtNode::Sequence { children, .. } = t else { panic!() };
        assert_eq!(children.len(), 4);
        assert!(matches!(&children[2], BtNode::Retry { k: 3, .. }));
        assert!(matches!(&children[0], BtNode::Leaf { .. }));
    }

    #[test]
    fn bt_exhausts_k_attempts() {
        let m = FailureModel::new().with("clean.wipe", 1.0).unwrap();
        let r = run_bt(&mut new_world(TaskId::CleanTable, 0), &m, 3).unwrap();
        assert!(!r.success);
        assert_eq!(r.steps, 3);
        assert_eq!(r.skills(), ["clean.wipe"; 3]);
    }

    #[test]
    fn replan_k_regenerates_from_current_state() {
        let m = FailureModel::new().with("dumpling.wrap", 1.0).unwrap();
        let r = run_replan_k(&mut new_world(TaskId::Dumpling, 0), &m, 3).unwrap();
        assert!(!r.success);
        assert_eq!(r.replans, 3);
        assert_eq!(
            r.skills(),
            [
                "dumpling.prepare",
                "dumpling.recover",
                "dumpling.wrap",
                "dumpling.recover",
                "dumpling.wrap",
                "dumpling.recover",
                "dumpling.wrap"
            ]
        );
    }

    #[test]
    fn replan_k_on_complete_world() {
        let mut w = new_world(TaskId::CleanTable, 0);
        w.set(Predicate::TableWiped, true).unwrap();
        w.set(Predicate::TableOrganized, true).unwrap();
        let r = run_replan_k(&mut w, &FailureModel::new(), 3).unwrap();
        assert!(r.success);
        assert_eq!((r.replans, r.steps), (1, 0));
    }

    #[test]
    fn static_ablation_keeps_recovery() {
        // Fetch recovery secures the object even without re-planning.
        let m = FailureModel::new().with("fetch.grasp", 1.0).unwrap();
        let r = run_agent(&mut new_world(TaskId::FetchObject, 0), &m, Variant::StaticPlan).unwrap();
        assert!(r.success);
        assert_eq!(r.recoveries, 1);
        let r = run_agent(&mut new_world(TaskId::FetchObject, 0), &m, Variant::NoRecovery).unwrap();
        assert!(!r.success);
    }
}
