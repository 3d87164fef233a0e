//! The single persistent agent: planner, instruction routing and the
//! closed-loop dispatcher.

mod closed_loop;
mod planner;

pub use closed_loop::{
    recount, run_closed_loop, run_closed_loop_with, AgentState, LoopConfig, MemoryRecord, Mode, System, TraceEvent, TrialResult,
    DEFAULT_REPLAN_CAP,
};
pub use planner::{plan, route_instruction, rules, task_for_entry, Condition, PlanStep, Planner, RetryCap, RuleBasedPlanner, TaskGraph};
