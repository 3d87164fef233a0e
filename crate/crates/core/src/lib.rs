//! Single-agent robot runtime: a predicate-level task simulator, installable
//! capability packages with a lifecycle registry, a policy-separated
//! execution runtime, a closed-loop planning agent, comparison baselines,
//! statistics and the experiment harness.

pub mod agent;
pub mod baselines;
pub mod ecm;
pub mod error;
pub mod harness;
pub mod runtime;
pub mod stats;
pub mod worldsim;

pub use agent::{run_closed_loop, AgentState, LoopConfig, Mode, System, TraceEvent, TrialResult};
pub use ecm::{LifecycleState, Manifest, Registry, RiskLevel};
pub use error::{AgentError, EcmError, HarnessError, StatsError, WorldError};
pub use harness::{emit_table, run_experiment, ExperimentConfig, ExperimentId, ExperimentReport, TableFormat};
pub use runtime::{check_policy, PolicyConfig, PolicyVerdict, Runtime, SkillRequest};
pub use worldsim::{new_world, FailureModel, Predicate, TaskId, WorldState};
