//! The persistent agent and its observe / plan / dispatch cycle.

use serde::{Deserialize, Serialize};

use super::planner::{PlanStep, Planner, RuleBasedPlanner};
use crate::ecm::{Registry, RiskLevel};
use crate::error::AgentError;
use crate::runtime::{BlockReason, Execution, Runtime, SkillRequest};
use crate::worldsim::{FailureModel, Observation, TaskId, WorldState};

pub const DEFAULT_REPLAN_CAP: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Re-plan from the current observation after every step.
    Dynamic,
    /// Plan once and run the whole sequence.
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub mode: Mode,
    /// Honour each step's retry budget.
    pub retries: bool,
    /// Run a step's `on_failure` skill once its attempts are exhausted.
    pub recovery: bool,
    /// Maximum number of planner invocations per trial.
    pub replan_cap: u32,
}

impl LoopConfig {
    pub fn dynamic() -> Self {
        Self { mode: Mode::Dynamic, retries: true, recovery: true, replan_cap: DEFAULT_REPLAN_CAP }
    }

    /// Plan once, no retries, no recovery.
    pub fn static_plain() -> Self {
        Self { mode: Mode::Static, retries: false, recovery: false, replan_cap: DEFAULT_REPLAN_CAP }
    }

    pub fn with_retries(mut self, on: bool) -> Self {
        self.retries = on;
        self
    }

    pub fn with_recovery(mut self, on: bool) -> Self {
        self.recovery = on;
        self
    }

    pub fn with_cap(mut self, cap: u32) -> Self {
        self.replan_cap = cap;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Planned { steps: Vec<String> },
    Attempt { skill: String, succeeded: bool },
    Blocked { skill: String, reason: BlockReason },
    Recovery { skill: String },
    Aborted { skill: String },
    CapReached,
    Completed,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialResult {
    pub success: bool,
    /// Skill invocations, counting failed attempts, retries and recoveries.
    pub steps: u32,
    /// Planner invocations.
    pub replans: u32,
    /// Recovery skills run after exhausted retries.
    pub recoveries: u32,
    pub blocked: u32,
    pub trace: Vec<TraceEvent>,
}

impl TrialResult {
    pub fn skills(&self) -> Vec<&str> {
        self.trace
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Attempt { skill, .. } | TraceEvent::Blocked { skill, .. } => Some(skill.as_str()),
                _ => None,
            })
            .collect()
    }
}

/// Counters rebuilt from a trace.
pub fn recount(trace: &[TraceEvent]) -> (u32, u32, u32, u32) {
    let (mut steps, mut replans, mut recoveries, mut blocked) = (0, 0, 0, 0);
    for e in trace {
        match e {
            TraceEvent::Planned { .. } => replans += 1,
            TraceEvent::Attempt { .. } => steps += 1,
            TraceEvent::Blocked { .. } => {
                steps += 1;
                blocked += 1
            }
            TraceEvent::Recovery { .. } => recoveries += 1,
            _ => {}
        }
    }
    (steps, replans, recoveries, blocked)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub trial: u32,
    pub cycle: u32,
    pub task: TaskId,
    pub event: TraceEvent,
}

/// The one decision-making subject of a system.
#[derive(Debug)]
pub struct AgentState {
    identity: String,
    memory: Vec<MemoryRecord>,
    world_view: Observation,
    trials: u32,
}

impl AgentState {
    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn memory(&self) -> &[MemoryRecord] {
        &self.memory
    }

    pub fn world_view(&self) -> &Observation {
        &self.world_view
    }

    /// Memory records of one trial, in order.
    pub fn trial_events(&self, trial: u32) -> Vec<TraceEvent> {
        self.memory.iter().filter(|r| r.trial == trial).map(|r| r.event.clone()).collect()
    }

    pub fn trials_run(&self) -> u32 {
        self.trials
    }
}

/// A robot system instance. It hands out at most one agent.
#[derive(Debug, Default)]
pub struct System {
    agent_issued: bool,
}

impl System {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn spawn_agent(&mut self, identity: &str) -> Result<AgentState, AgentError> {
        if self.agent_issued {
            return Err(AgentError::AgentExists);
        }
        self.agent_issued = true;
        Ok(AgentState { identity: identity.to_owned(), memory: Vec::new(), world_view: Observation::new(), trials: 0 })
    }
}

struct Cycle<'a> {
    agent: &'a mut AgentState,
    world: &'a mut WorldState,
    registry: &'a Registry,
    runtime: &'a mut Runtime,
    model: &'a FailureModel,
    config: LoopConfig,
    result: TrialResult,
    trial: u32,
}

enum StepEnd {
    Done,
    Recovered,
    Failed,
}

impl Cycle<'_> {
    fn record(&mut self, event: TraceEvent) {
        self.agent.memory.push(MemoryRecord {
            trial: self.trial,
            cycle: self.result.replans,
            task: self.world.task(),
            event: event.clone(),
        });
        self.result.trace.push(event);
    }

    fn request(&self, skill: &str) -> SkillRequest {
        let package = self.world.task().package();
        match self.registry.entry(package).and_then(|e| e.manifest.skill(skill)) {
            Some(def) => SkillRequest::for_skill(package, def),
            None => SkillRequest { package: package.to_owned(), skill: skill.to_owned(), actuators: Vec::new(), risk: RiskLevel::Low },
        }
    }

    fn attempt(&mut self, skill: &str) -> Result<bool, AgentError> {
        let request = self.request(skill);
        self.result.steps += 1;
        match self.runtime.execute(&request, self.registry, self.world, self.model)? {
            Execution::Ran(outcome) => {
                self.record(TraceEvent::Attempt { skill: skill.to_owned(), succeeded: outcome.succeeded });
                Ok(outcome.succeeded)
            }
            Execution::Blocked(reason) => {
                self.result.blocked += 1;
                self.record(TraceEvent::Blocked { skill: skill.to_owned(), reason });
                Ok(false)
            }
        }
    }

    fn run_step(&mut self, step: &PlanStep) -> Result<StepEnd, AgentError> {
        let attempts = 1 + if self.config.retries { u32::from(step.retry_budget) } else { 0 };
        for _ in 0..attempts {
            if self.attempt(&step.skill)? {
                return Ok(StepEnd::Done);
            }
        }
        match (&step.on_failure, self.config.recovery) {
            (Some(fallback), true) => {
                self.result.recoveries += 1;
                self.record(TraceEvent::Recovery { skill: fallback.clone() });
                self.attempt(fallback)?;
                Ok(StepEnd::Recovered)
            }
            _ => Ok(StepEnd::Failed),
        }
    }

    fn plan(&mut self, planner: &dyn Planner) -> Vec<PlanStep> {
        let obs = self.world.observe();
        self.result.replans += 1;
        self.runtime.set_cycle(u64::from(self.result.replans));
        let steps = planner.plan(self.world.task(), &obs).steps();
        self.agent.world_view = obs;
        self.record(TraceEvent::Planned { steps: steps.iter().map(|s| s.skill.clone()).collect() });
        steps
    }

    fn run(mut self, planner: &dyn Planner) -> Result<TrialResult, AgentError> {
        match self.config.mode {
            Mode::Dynamic => loop {
                if self.result.replans >= self.config.replan_cap {
                    self.record(TraceEvent::CapReached);
                    break;
                }
                let steps = self.plan(planner);
                let Some(first) = steps.first() else {
                    self.result.success = true;
                    self.record(TraceEvent::Completed);
                    break;
                };
                if let StepEnd::Failed = self.run_step(first)? {
                    self.record(TraceEvent::Aborted { skill: first.skill.clone() });
                    break;
                }
            },
            Mode::Static => {
                for step in self.plan(planner) {
                    if let StepEnd::Failed = self.run_step(&step)? {
                        self.record(TraceEvent::Aborted { skill: step.skill.clone() });
                        break;
                    }
                }
                self.result.success = self.world.is_complete();
                if self.result.success {
                    self.record(TraceEvent::Completed);
                }
            }
        }
        Ok(self.result)
    }
}

/// Runs one trial of the agent on `world`.
///
/// Every skill attempt goes through the runtime's policy check; a blocked
/// attempt counts as a failed attempt. In dynamic mode only the first step
/// of each fresh plan is executed. A step whose attempts are exhausted and
/// that has no usable recovery ends the trial.
pub fn run_closed_loop(
    agent: &mut AgentState,
    world: &mut WorldState,
    registry: &Registry,
    runtime: &mut Runtime,
    model: &FailureModel,
    config: LoopConfig,
) -> Result<TrialResult, AgentError> {
    run_closed_loop_with(&RuleBasedPlanner, agent, world, registry, runtime, model, config)
}

pub fn run_closed_loop_with(
    planner: &dyn Planner,
    agent: &mut AgentState,
    world: &mut WorldState,
    registry: &Registry,
    runtime: &mut Runtime,
    model: &FailureModel,
    config: LoopConfig,
) -> Result<TrialResult, AgentError> {
    let task = world.task();
    if config.replan_cap == 0 {
        return Err(AgentError::ZeroReplanBudget);
    }
    if !registry.is_active(task.package()) {
        return Err(AgentError::InactiveEcm(task));
    }
    runtime.begin_trial();
    let trial = agent.trials;
    agent.trials += 1;
    let cycle = Cycle { agent, world, registry, runtime, model, config, result: TrialResult::default(), trial };
    cycle.run(planner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecm::builtin;
    use crate::runtime::PolicyConfig;
    use crate::worldsim::new_world;

    fn rig(task: TaskId) -> (AgentState, Registry, Runtime) {
        let mut sys = System::new();
        let agent = sys.spawn_agent("unit").unwrap();
        (agent, builtin::registry_with(&[task]).unwrap(), Runtime::new(PolicyConfig::default()))
    }

    #[test]
    fn single_agent_per_system() {
        let mut sys = System::new();
        sys.spawn_agent("a").unwrap();
        assert!(matches!(sys.spawn_agent("b"), Err(AgentError::AgentExists)));
    }

    #[test]
    fn failure_free_dynamic_dumpling() {
        let (mut agent, reg, mut rt) = rig(TaskId::Dumpling);
        let mut w = new_world(TaskId::Dumpling, 9);
        let r = run_closed_loop(&mut agent, &mut w, &reg, &mut rt, &FailureModel::new(), LoopConfig::dynamic()).unwrap();
        assert!(r.success);
        assert_eq!(r.steps, 4);
        assert_eq!(r.replans, 5);
        assert_eq!(r.recoveries, 0);
        assert_eq!(r.skills(), ["dumpling.prepare", "dumpling.recover", "dumpling.wrap", "dumpling.boil"]);
    }

    #[test]
    fn certain_failure_with_recovery_hits_cap() {
        let (mut agent, reg, mut rt) = rig(TaskId::CleanTable);
        let model = FailureModel::new().with("clean.wipe", 1.0).unwrap();
        let mut w = new_world(TaskId::CleanTable, 1);
        let r = run_closed_loop(&mut agent, &mut w, &reg, &mut rt, &model, LoopConfig::dynamic().with_cap(4)).unwrap();
        assert!(!r.success);
        assert_eq!(r.replans, 4);
        assert_eq!(r.recoveries, 4);
        // Two wipe attempts and one recovery per cycle.
        assert_eq!(r.steps, 12);
        assert_eq!(r.trace.last(), Some(&TraceEvent::CapReached));
    }

    #[test]
    fn exhausted_step_without_recovery_aborts() {
        let (mut agent, reg, mut rt) = rig(TaskId::FetchObject);
        let model = FailureModel::new().with("fetch.grasp", 1.0).unwrap();
        let mut w = new_world(TaskId::FetchObject, 1);
        let cfg = LoopConfig::dynamic().with_recovery(false);
        let r = run_closed_loop(&mut agent, &mut w, &reg, &mut rt, &model, cfg).unwrap();
        assert!(!r.success);
        assert_eq!(r.steps, 4);
        assert_eq!(r.replans, 3);
        assert!(matches!(r.trace.last(), Some(TraceEvent::Aborted { .. })));
    }

    #[test]
    fn static_plan_runs_once() {
        let (mut agent, reg, mut rt) = rig(TaskId::Dumpling);
        let model = FailureModel::new().with("dumpling.wrap", 1.0).unwrap();
        let mut w = new_world(TaskId::Dumpling, 3);
        let r = run_closed_loop(&mut agent, &mut w, &reg, &mut rt, &model, LoopConfig::static_plain()).unwrap();
        assert!(!r.success);
        assert_eq!((r.steps, r.replans), (3, 1));
    }

    #[test]
    fn inactive_package_rejected() {
        let (mut agent, reg, mut rt) = rig(TaskId::Dumpling);
        let mut w = new_world(TaskId::CleanTable, 0);
        let err = run_closed_loop(&mut agent, &mut w, &reg, &mut rt, &FailureModel::new(), LoopConfig::dynamic()).unwrap_err();
        assert!(matches!(err, AgentError::InactiveEcm(TaskId::CleanTable)));
        let mut w = new_world(TaskId::Dumpling, 0);
        let err = run_closed_loop(&mut agent, &mut w, &reg, &mut rt, &FailureModel::new(), LoopConfig::dynamic().with_cap(0));
        assert!(matches!(err, Err(AgentError::ZeroReplanBudget)));
    }

    #[test]
    fn blocked_steps_count_as_failures() {
        let (mut agent, reg, _) = rig(TaskId::Dumpling);
        let mut policy = PolicyConfig::default();
        policy.operator_overrides.insert("dumpling.boil".into(), crate::runtime::Override::Deny);
        let mut rt = Runtime::new(policy);
        let mut w = new_world(TaskId::Dumpling, 0);
        let r = run_closed_loop(&mut agent, &mut w, &reg, &mut rt, &FailureModel::new(), LoopConfig::dynamic()).unwrap();
        assert!(!r.success);
        assert_eq!(r.blocked, 1);
        assert_eq!(rt.audit().blocks().count(), 1);
        assert!(!w.get(crate::worldsim::Predicate::DumplingCooked));
    }

    #[test]
    fn memory_spans_trials_and_replays() {
        let (mut agent, reg, mut rt) = rig(TaskId::Dumpling);
        let model = FailureModel::evaluation_defaults();
        let mut results = Vec::new();
        for seed in 0..5 {
            let mut w = new_world(TaskId::Dumpling, seed);
            results.push(run_closed_loop(&mut agent, &mut w, &reg, &mut rt, &model, LoopConfig::dynamic()).unwrap());
        }
        assert_eq!(agent.trials_run(), 5);
        for (i, r) in results.iter().enumerate() {
            let events = agent.trial_events(i as u32);
            assert_eq!(events, r.trace);
            assert_eq!(recount(&events), (r.steps, r.replans, r.recoveries, r.blocked));
        }
    }
}
