//! Policy-separated execution: every skill request passes the policy check
//! before it may touch the world, and every block is audited.

mod audit;
mod battery;
mod policy;

pub use audit::{AuditFilter, AuditLog, AuditRecord};
pub use battery::{canonical_archetypes, run_battery, Archetype, BatteryReport};
pub use policy::{check_policy, BlockReason, Override, PolicyConfig, PolicyVerdict, QuotaUsage, SkillRequest};

use crate::ecm::Registry;
use crate::error::WorldError;
use crate::worldsim::{FailureModel, SkillOutcome, WorldState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Execution {
    Ran(SkillOutcome),
    Blocked(BlockReason),
}

#[derive(Debug, Clone)]
pub struct Runtime {
    policy: PolicyConfig,
    audit: AuditLog,
    usage: QuotaUsage,
    log_allows: bool,
    cycle: u64,
}

impl Runtime {
    pub fn new(policy: PolicyConfig) -> Self {
        Self { policy, audit: AuditLog::new(), usage: QuotaUsage::default(), log_allows: false, cycle: 0 }
    }

    /// Also record allowed requests in the audit log.
    pub fn with_allow_logging(mut self, on: bool) -> Self {
        self.log_allows = on;
        self
    }

    pub fn policy(&self) -> &PolicyConfig {
        &self.policy
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn set_cycle(&mut self, cycle: u64) {
        self.cycle = cycle;
    }

    /// Resets per-trial quota usage.
    pub fn begin_trial(&mut self) {
        self.usage.clear();
    }

    /// Policy check with bookkeeping: quota usage on allow, audit on block.
    pub fn check(&mut self, request: &SkillRequest, registry: &Registry) -> PolicyVerdict {
        let verdict = check_policy(request, &self.policy, registry, &self.usage);
        match verdict {
            PolicyVerdict::Allow => {
                self.usage.record(request);
                if self.log_allows {
                    self.audit.append(request, verdict, self.cycle);
                }
            }
            PolicyVerdict::Block(_) => {
                self.audit.append(request, verdict, self.cycle);
            }
        }
        verdict
    }

    /// Runs the request's skill in the world if the policy admits it. A
    /// blocked request leaves the world untouched.
    pub fn execute(
        &mut self,
        request: &SkillRequest,
        registry: &Registry,
        world: &mut WorldState,
        model: &FailureModel,
    ) -> Result<Execution, WorldError> {
        match self.check(request, registry) {
            PolicyVerdict::Allow => world.apply_skill(&request.skill, model).map(Execution::Ran),
            PolicyVerdict::Block(reason) => Ok(Execution::Blocked(reason)),
        }
    }
}
