//! Rule-based, world-state-conditioned planner and instruction routing.

use serde::{Deserialize, Serialize};

use crate::error::AgentError;
use crate::worldsim::{Observation, Predicate, TaskId};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanStep {
    pub skill: String,
    /// Extra attempts after the first failure.
    pub retry_budget: u8,
    pub on_failure: Option<String>,
}

impl PlanStep {
    pub fn new(skill: &str) -> Self {
        Self { skill: skill.to_owned(), retry_budget: 0, on_failure: None }
    }

    pub fn with_retry(mut self, retries: u8, on_failure: &str) -> Self {
        self.retry_budget = retries;
        self.on_failure = Some(on_failure.to_owned());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// At least one of the predicates is false.
    AnyFalse(Vec<Predicate>),
    /// Every predicate is false.
    AllFalse(Vec<Predicate>),
}

impl Condition {
    pub fn holds(&self, obs: &Observation) -> bool {
        let value = |p: &Predicate| obs.get(p).copied().unwrap_or(false);
        match self {
            Condition::AnyFalse(ps) => ps.iter().any(|p| !value(p)),
            Condition::AllFalse(ps) => ps.iter().all(|p| !value(p)),
        }
    }
}

/// Skill composition: sequence, conditional and parallel nodes over plan
/// steps. Parallel children run in declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskGraph {
    Step(PlanStep),
    Seq(Vec<TaskGraph>),
    Par(Vec<TaskGraph>),
    Cond { when: Condition, then: Box<TaskGraph>, otherwise: Box<TaskGraph> },
}

impl TaskGraph {
    pub fn empty() -> Self {
        TaskGraph::Seq(Vec::new())
    }

    fn when(when: Condition, then: TaskGraph) -> Self {
        TaskGraph::Cond { when, then: Box::new(then), otherwise: Box::new(TaskGraph::empty()) }
    }

    /// Resolves conditionals against `obs` and flattens to executable steps.
    pub fn linearize(&self, obs: &Observation) -> Vec<PlanStep> {
        let mut out = Vec::new();
        self.collect(obs, &mut out);
        out
    }

    fn collect(&self, obs: &Observation, out: &mut Vec<PlanStep>) {
        match self {
            TaskGraph::Step(s) => out.push(s.clone()),
            TaskGraph::Seq(children) | TaskGraph::Par(children) => children.iter().for_each(|c| c.collect(obs, out)),
            TaskGraph::Cond { when, then, otherwise } => {
                if when.holds(obs) {
                    then.collect(obs, out)
                } else {
                    otherwise.collect(obs, out)
                }
            }
        }
    }

    /// Steps of an already linear graph, without evaluating conditions.
    pub fn steps(&self) -> Vec<PlanStep> {
        match self {
            TaskGraph::Step(s) => vec![s.clone()],
            TaskGraph::Seq(c) | TaskGraph::Par(c) => c.iter().flat_map(TaskGraph::steps).collect(),
            TaskGraph::Cond { .. } => Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.steps().is_empty()
    }
}

/// The planning rules of each task as a conditional graph.
pub fn rules(task: TaskId) -> TaskGraph {
    use Condition::*;
    use Predicate::*;
    let step = |s: &str| TaskGraph::Step(PlanStep::new(s));
    match task {
        TaskId::Dumpling => TaskGraph::Seq(vec![
            TaskGraph::when(AnyFalse(vec![DoughOnWorkspace, FillingOnWorkspace]), step("dumpling.prepare")),
            TaskGraph::when(AllFalse(vec![WrapperAligned, DumplingWrapped]), step("dumpling.recover")),
            TaskGraph::when(
                AnyFalse(vec![DumplingWrapped]),
                TaskGraph::Step(PlanStep::new("dumpling.wrap").with_retry(2, "dumpling.recover")),
            ),
            TaskGraph::when(AnyFalse(vec![DumplingCooked]), step("dumpling.boil")),
        ]),
        // Retry and recovery for wipe are injected at the agent level.
        TaskId::CleanTable => TaskGraph::Seq(vec![
            TaskGraph::when(AnyFalse(vec![TableWiped]), TaskGraph::Step(PlanStep::new("clean.wipe").with_retry(1, "clean.recover"))),
            TaskGraph::when(AnyFalse(vec![TableOrganized]), step("clean.organize")),
        ]),
        TaskId::FetchObject => TaskGraph::Seq(vec![
            TaskGraph::when(AnyFalse(vec![RobotAtTarget]), step("fetch.navigate")),
            TaskGraph::when(AnyFalse(vec![ObjectDetected]), step("fetch.detect")),
            TaskGraph::when(AnyFalse(vec![ObjectGrasped]), TaskGraph::Step(PlanStep::new("fetch.grasp").with_retry(1, "fetch.recover"))),
            TaskGraph::when(AnyFalse(vec![ObjectDelivered]), step("fetch.deliver")),
        ]),
    }
}

/// A planning function from an observation to a task graph.
pub trait Planner {
    fn plan(&self, task: TaskId, obs: &Observation) -> TaskGraph;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedPlanner;

impl Planner for RuleBasedPlanner {
    fn plan(&self, task: TaskId, obs: &Observation) -> TaskGraph {
        plan(task, obs)
    }
}

/// Rule-based planning with every step's retry budget capped at the given value.
#[derive(Debug, Clone, Copy)]
pub struct RetryCap(pub u8);

impl Planner for RetryCap {
    fn plan(&self, task: TaskId, obs: &Observation) -> TaskGraph {
        let steps = plan(task, obs).steps().into_iter().map(|mut s| {
            s.retry_budget = s.retry_budget.min(self.0);
            TaskGraph::Step(s)
        });
        TaskGraph::Seq(steps.collect())
    }
}

/// Emits, in order, only the steps that remain incomplete.
pub fn plan(task: TaskId, obs: &Observation) -> TaskGraph {
    TaskGraph::Seq(rules(task).linearize(obs).into_iter().map(TaskGraph::Step).collect())
}

/// Maps a free-text instruction to the entry-point skill of a task.
pub fn route_instruction(text: &str) -> Result<&'static str, AgentError> {
    let t = text.to_lowercase();
    if t.contains("dumpling") {
        Ok("dumpling.plan")
    } else if t.contains("clean") || t.contains("table") {
        Ok("clean.plan")
    } else if ["fetch", "bring", "retrieve"].iter().any(|k| t.contains(k)) {
        Ok("fetch.plan")
    } else {
        Err(AgentError::NoMatchingTask(text.to_owned()))
    }
}

/// Task owning a routed entry-point skill.
pub fn task_for_entry(entry: &str) -> Option<TaskId> {
    TaskId::ALL.into_iter().find(|t| entry == format!("{}.plan", t.namespace()))
}
