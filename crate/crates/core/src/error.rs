use thiserror::Error;

use crate::ecm::{LifecycleState, ValidationReport};
use crate::worldsim::{Predicate, TaskId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("skill `{skill}` is not defined for task {task}")]
    UnknownSkill { task: TaskId, skill: String },
    #[error("predicate {predicate} does not belong to task {task}")]
    ForeignPredicate { task: TaskId, predicate: Predicate },
    #[error("failure probability {p} for `{skill}` is outside [0, 1]")]
    InvalidProbability { skill: String, p: f64 },
}

#[derive(Debug, Error)]
pub enum EcmError {
    #[error("package `{0}` is not registered")]
    UnknownPackage(String),
    #[error("package `{0}` is already registered")]
    AlreadyRegistered(String),
    #[error("illegal transition for `{package}`: {from} -> {to}")]
    IllegalTransition { package: String, from: LifecycleState, to: LifecycleState },
    #[error("package failed validation:\n{0}")]
    ValidationFailed(ValidationReport),
    #[error("malformed manifest: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no task matches instruction `{0}`")]
    NoMatchingTask(String),
    #[error("capability package for task {0} is not active")]
    InactiveEcm(TaskId),
    #[error("this system already hosts an agent")]
    AgentExists,
    #[error("replan budget must be at least 1")]
    ZeroReplanBudget,
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("sample size must be positive")]
    EmptySample,
    #[error("successes {successes} exceed trials {n}")]
    SuccessesExceedTrials { successes: u64, n: u64 },
    #[error("contingency table has no observations")]
    EmptyTable,
    #[error("probability {0} is outside the open interval (0, 1)")]
    BadProbability(f64),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown experiment `{0}` (expected E1..E8)")]
    UnknownExperiment(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ecm(#[from] EcmError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    World(#[from] WorldError),
}
