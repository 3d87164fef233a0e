use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ecm::{skill_namespace, LifecycleState, Registry, RiskLevel, SkillDef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Override {
    Allow,
    Deny,
}

/// Runtime constraint set applied to every skill request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub enabled: bool,
    /// Keyed by skill name, or `actuator:<name>`. A matching deny always
    /// blocks; an allow on the skill name short-circuits the later layers.
    pub operator_overrides: BTreeMap<String, Override>,
    pub global_blocked_actuators: BTreeSet<String>,
    pub max_allowed_risk: RiskLevel,
    /// Allowed invocations per trial, keyed by skill name or `*` for all.
    pub quotas: BTreeMap<String, u32>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            operator_overrides: BTreeMap::new(),
            global_blocked_actuators: ["knife".to_owned()].into(),
            max_allowed_risk: RiskLevel::Medium,
            quotas: BTreeMap::new(),
        }
    }
}

impl PolicyConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillRequest {
    /// Package on whose behalf the skill is invoked.
    pub package: String,
    pub skill: String,
    pub actuators: Vec<String>,
    pub risk: RiskLevel,
}

impl SkillRequest {
    /// The request a package issues for one of its declared skills.
    pub fn for_skill(package: &str, def: &SkillDef) -> Self {
        Self { package: package.to_owned(), skill: def.name.clone(), actuators: def.actuators.clone(), risk: def.risk_level }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockReason {
    OperatorOverride,
    ActuatorDenied,
    RiskExceeded,
    CrossEcmViolation,
    UnknownSkill,
    QuotaExceeded,
}

impl fmt::Display for BlockReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockReason::OperatorOverride => "operator_override",
            BlockReason::ActuatorDenied => "actuator_denied",
            BlockReason::RiskExceeded => "risk_exceeded",
            BlockReason::CrossEcmViolation => "cross_ecm_violation",
            BlockReason::UnknownSkill => "unknown_skill",
            BlockReason::QuotaExceeded => "quota_exceeded",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "lowercase")]
pub enum PolicyVerdict {
    Allow,
    Block(BlockReason),
}

impl PolicyVerdict {
    pub fn is_allow(self) -> bool {
        matches!(self, PolicyVerdict::Allow)
    }
}

/// Allowed invocations so far in the current trial.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuotaUsage {
    per_skill: BTreeMap<(String, String), u32>,
    per_package: BTreeMap<String, u32>,
}

impl QuotaUsage {
    pub fn record(&mut self, request: &SkillRequest) {
        *self.per_skill.entry((request.package.clone(), request.skill.clone())).or_default() += 1;
        *self.per_package.entry(request.package.clone()).or_default() += 1;
    }

    pub fn skill(&self, package: &str, skill: &str) -> u32 {
        self.per_skill.get(&(package.to_owned(), skill.to_owned())).copied().unwrap_or(0)
    }

    pub fn package(&self, package: &str) -> u32 {
        self.per_package.get(package).copied().unwrap_or(0)
    }

    pub fn clear(&mut self) {
        self.per_skill.clear();
        self.per_package.clear();
    }
}

fn quota_hit(quotas: &BTreeMap<String, u32>, request: &SkillRequest, usage: &QuotaUsage) -> bool {
    let skill_hit = quotas.get(&request.skill).is_some_and(|&q| usage.skill(&request.package, &request.skill) >= q);
    let total_hit = quotas.get("*").is_some_and(|&q| usage.package(&request.package) >= q);
    skill_hit || total_hit
}

/// Layered permission check. Layers run in a fixed order and the first
/// failing layer names the reason:
///
/// 1. operator overrides,
/// 2. permissions declared by the invoking package,
/// 3. skill-level risk and actuator scope against the global policy.
pub fn check_policy(request: &SkillRequest, policy: &PolicyConfig, registry: &Registry, usage: &QuotaUsage) -> PolicyVerdict {
    use BlockReason::*;
    use PolicyVerdict::{Allow, Block};

    if !policy.enabled {
        return Allow;
    }

    // Layer 1.
    let skill_override = policy.operator_overrides.get(&request.skill).copied();
    let actuator_denied =
        request.actuators.iter().any(|a| policy.operator_overrides.get(&format!("actuator:{a}")) == Some(&Override::Deny));
    if skill_override == Some(Override::Deny) || actuator_denied {
        return Block(OperatorOverride);
    }
    if skill_override == Some(Override::Allow) {
        return Allow;
    }

    // Layer 2.
    let live = registry.entry(&request.package).filter(|e| e.state == LifecycleState::Active);
    let Some(entry) = live else {
        return Block(UnknownSkill);
    };
    let manifest = &entry.manifest;
    let Some(def) = manifest.skill(&request.skill) else {
        let foreign_namespace = skill_namespace(&request.skill).is_some_and(|ns| Some(ns) != manifest.namespace());
        let exists_elsewhere = registry.active_skill(&request.skill).is_some();
        return Block(if foreign_namespace && exists_elsewhere { CrossEcmViolation } else { UnknownSkill });
    };
    let perms = &manifest.permissions;
    if request.actuators.iter().any(|a| perms.blocked_actuators.contains(a) || !perms.allowed_actuators.contains(a)) {
        return Block(ActuatorDenied);
    }
    if request.risk > perms.max_risk_level {
        return Block(RiskExceeded);
    }
    if quota_hit(&perms.resource_quotas, request, usage) {
        return Block(QuotaExceeded);
    }

    // Layer 3.
    if request.risk.max(def.risk_level) > policy.max_allowed_risk {
        return Block(RiskExceeded);
    }
    if request.actuators.iter().any(|a| policy.global_blocked_actuators.contains(a) || !def.actuators.contains(a)) {
        return Block(ActuatorDenied);
    }
    if quota_hit(&policy.quotas, request, usage) {
        return Block(QuotaExceeded);
    }
    Allow
}
