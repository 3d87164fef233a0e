//! The canonical permission-check battery: 18 request archetypes (6 valid,
//! 4 blocked-actuator, 3 high-risk, 3 cross-package, 2 nonexistent-skill)
//! evaluated once per trial.

use serde::Serialize;

use super::policy::{BlockReason, PolicyVerdict, SkillRequest};
use super::Runtime;
use crate::ecm::{Registry, RiskLevel};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Archetype {
    pub label: &'static str,
    pub request: SkillRequest,
    /// `None` for a valid request.
    pub expected_block: Option<BlockReason>,
}

fn request(package: &str, skill: &str, actuators: &[&str], risk: RiskLevel) -> SkillRequest {
    SkillRequest {
        package: package.to_owned(),
        skill: skill.to_owned(),
        actuators: actuators.iter().map(|s| (*s).to_owned()).collect(),
        risk,
    }
}

pub fn canonical_archetypes() -> Vec<Archetype> {
    use BlockReason::*;
    use RiskLevel::*;
    const D: &str = "make_dumplings";
    const C: &str = "clean_table";
    let a = |label, request, expected_block| Archetype { label, request, expected_block };
    vec![
        a("valid:prepare", request(D, "dumpling.prepare", &["arm", "gripper"], Low), None),
        a("valid:wrap", request(D, "dumpling.wrap", &["arm", "gripper"], Medium), None),
        a("valid:boil", request(D, "dumpling.boil", &["arm", "stove"], Medium), None),
        a("valid:wipe", request(C, "clean.wipe", &["arm", "wiper"], Low), None),
        a("valid:organize", request(C, "clean.organize", &["arm", "gripper"], Low), None),
        a("valid:recover", request(C, "clean.recover", &["arm", "wiper"], Low), None),
        a("actuator:prepare+knife", request(D, "dumpling.prepare", &["arm", "knife"], Low), Some(ActuatorDenied)),
        a("actuator:wrap+knife", request(D, "dumpling.wrap", &["knife"], Medium), Some(ActuatorDenied)),
        a("actuator:wipe+knife", request(C, "clean.wipe", &["wiper", "knife"], Low), Some(ActuatorDenied)),
        a("actuator:organize+torch", request(C, "clean.organize", &["arm", "torch"], Low), Some(ActuatorDenied)),
        a("risk:boil", request(D, "dumpling.boil", &["arm", "stove"], High), Some(RiskExceeded)),
        a("risk:wrap", request(D, "dumpling.wrap", &["arm", "gripper"], High), Some(RiskExceeded)),
        a("risk:wipe", request(C, "clean.wipe", &["arm", "wiper"], High), Some(RiskExceeded)),
        a("cross:wrap@clean", request(C, "dumpling.wrap", &["arm", "gripper"], Medium), Some(CrossEcmViolation)),
        a("cross:boil@clean", request(C, "dumpling.boil", &["arm", "stove"], Medium), Some(CrossEcmViolation)),
        a("cross:wipe@dumpling", request(D, "clean.wipe", &["arm", "wiper"], Low), Some(CrossEcmViolation)),
        a("unknown:fly", request(D, "dumpling.fly", &["arm"], Low), Some(UnknownSkill)),
        a("unknown:teleport", request(C, "clean.teleport", &["base"], Low), Some(UnknownSkill)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatteryReport {
    pub checks: u64,
    pub valid_checks: u64,
    pub invalid_checks: u64,
    /// Percentage of invalid requests blocked; 100 when there are none.
    pub blocked_pct: f64,
    pub false_accept_pct: f64,
    pub false_reject_pct: f64,
    /// Blocked invalid requests whose reason differs from the expected one.
    pub misattributed: u64,
    /// Set when no invalid archetype was evaluated.
    pub empty_invalid: bool,
}

fn pct(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Runs `archetypes` `n_trials` times through the runtime's policy check.
/// Quota usage is reset between trials.
pub fn run_battery(runtime: &mut Runtime, registry: &Registry, archetypes: &[Archetype], n_trials: u32) -> BatteryReport {
    let (mut valid, mut invalid, mut blocked_invalid, mut accepted_invalid, mut rejected_valid, mut misattributed) = (0, 0, 0, 0, 0, 0);
    for trial in 0..n_trials {
        runtime.begin_trial();
        runtime.set_cycle(trial as u64);
        for a in archetypes {
            let verdict = runtime.check(&a.request, registry);
            match (a.expected_block, verdict) {
                (None, PolicyVerdict::Allow) => valid += 1,
                (None, PolicyVerdict::Block(_)) => {
                    valid += 1;
                    rejected_valid += 1;
                }
                (Some(_), PolicyVerdict::Allow) => {
                    invalid += 1;
                    accepted_invalid += 1;
                }
                (Some(expected), PolicyVerdict::Block(got)) => {
                    invalid += 1;
                    blocked_invalid += 1;
                    if expected != got {
                        misattributed += 1;
                    }
                }
            }
        }
    }
    BatteryReport {
        checks: valid + invalid,
        valid_checks: valid,
        invalid_checks: invalid,
        blocked_pct: pct(blocked_invalid, invalid, 100.0),
        false_accept_pct: pct(accepted_invalid, invalid, 0.0),
        false_reject_pct: pct(rejected_valid, valid, 0.0),
        misattributed,
        empty_invalid: invalid == 0,
    }
}
