//! Seeded predicate worlds for the three evaluation tasks.
//!
//! A world is a set of Boolean completion predicates plus a private random
//! stream. Skills flip predicates; the configured failure probability of a
//! skill is checked with exactly one Bernoulli draw per invocation.
//!
//! # Random stream
//!
//! The stream is `rand_chacha::ChaCha8Rng::seed_from_u64(seed)`. One draw is
//! one `next_u64()` mapped to `[0, 1)` as `(x >> 11) * 2^-53`; the attempt
//! fails iff the draw is strictly below the failure probability. Golden
//! values in the tests freeze this exact stream.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::WorldError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Dumpling,
    CleanTable,
    FetchObject,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::Dumpling, TaskId::CleanTable, TaskId::FetchObject];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Dumpling => "dumpling",
            TaskId::CleanTable => "clean_table",
            TaskId::FetchObject => "fetch_object",
        }
    }

    /// Skill namespace used by the task's capability package.
    pub fn namespace(self) -> &'static str {
        match self {
            TaskId::Dumpling => "dumpling",
            TaskId::CleanTable => "clean",
            TaskId::FetchObject => "fetch",
        }
    }

    /// Name of the capability package that provides this task.
    pub fn package(self) -> &'static str {
        match self {
            TaskId::Dumpling => "make_dumplings",
            TaskId::CleanTable => "clean_table",
            TaskId::FetchObject => "fetch_object",
        }
    }

    pub fn predicates(self) -> &'static [Predicate] {
        use Predicate::*;
        match self {
            TaskId::Dumpling => &[DoughOnWorkspace, FillingOnWorkspace, WrapperAligned, DumplingWrapped, DumplingCooked],
            TaskId::CleanTable => &[TableWiped, TableOrganized],
            TaskId::FetchObject => &[RobotAtTarget, ObjectDetected, ObjectGrasped, ObjectDelivered],
        }
    }

    /// Predicates that must all hold for the task to count as complete.
    /// `wrapper_aligned` is auxiliary and not part of dumpling completion.
    pub fn completion_predicates(self) -> &'static [Predicate] {
        use Predicate::*;
        match self {
            TaskId::Dumpling => &[DoughOnWorkspace, FillingOnWorkspace, DumplingWrapped, DumplingCooked],
            other => other.predicates(),
        }
    }

    /// The skill whose failure probability the experiments perturb.
    pub fn stochastic_skill(self) -> &'static str {
        match self {
            TaskId::Dumpling => "dumpling.wrap",
            TaskId::CleanTable => "clean.wipe",
            TaskId::FetchObject => "fetch.grasp",
        }
    }

    pub fn skills(self) -> &'static [SkillEffect] {
        match self {
            TaskId::Dumpling => DUMPLING_SKILLS,
            TaskId::CleanTable => CLEAN_SKILLS,
            TaskId::FetchObject => FETCH_SKILLS,
        }
    }

    pub fn skill(self, name: &str) -> Option<&'static SkillEffect> {
        self.skills().iter().find(|s| s.name == name)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dumpling" => Ok(TaskId::Dumpling),
            "clean_table" => Ok(TaskId::CleanTable),
            "fetch_object" => Ok(TaskId::FetchObject),
            other => Err(WorldError::UnknownTask(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    DoughOnWorkspace,
    FillingOnWorkspace,
    WrapperAligned,
    DumplingWrapped,
    DumplingCooked,
    TableWiped,
    TableOrganized,
    RobotAtTarget,
    ObjectDetected,
    ObjectGrasped,
    ObjectDelivered,
}

impl Predicate {
    pub fn as_str(self) -> &'static str {
        use Predicate::*;
        match self {
            DoughOnWorkspace => "dough_on_workspace",
            FillingOnWorkspace => "filling_on_workspace",
            WrapperAligned => "wrapper_aligned",
            DumplingWrapped => "dumpling_wrapped",
            DumplingCooked => "dumpling_cooked",
            TableWiped => "table_wiped",
            TableOrganized => "table_organized",
            RobotAtTarget => "robot_at_target",
            ObjectDetected => "object_detected",
            ObjectGrasped => "object_grasped",
            ObjectDelivered => "object_delivered",
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Built-in simulator behaviour bound to a skill name.
#[derive(Debug)]
pub struct SkillEffect {
    pub name: &'static str,
    pub sets_on_success: &'static [Predicate],
    pub clears_on_failure: &'static [Predicate],
}

use Predicate::*;

static DUMPLING_SKILLS: &[SkillEffect] = &[
    SkillEffect { name: "dumpling.plan", sets_on_success: &[], clears_on_failure: &[] },
    SkillEffect { name: "dumpling.prepare", sets_on_success: &[DoughOnWorkspace, FillingOnWorkspace], clears_on_failure: &[] },
    SkillEffect { name: "dumpling.recover", sets_on_success: &[WrapperAligned], clears_on_failure: &[] },
    SkillEffect { name: "dumpling.wrap", sets_on_success: &[DumplingWrapped], clears_on_failure: &[WrapperAligned] },
    SkillEffect { name: "dumpling.boil", sets_on_success: &[DumplingCooked], clears_on_failure: &[] },
];

static CLEAN_SKILLS: &[SkillEffect] = &[
    SkillEffect { name: "clean.plan", sets_on_success: &[], clears_on_failure: &[] },
    SkillEffect { name: "clean.wipe", sets_on_success: &[TableWiped], clears_on_failure: &[] },
    SkillEffect { name: "clean.organize", sets_on_success: &[TableOrganized], clears_on_failure: &[] },
    // Resets the wiping station; touches no completion predicate.
    SkillEffect { name: "clean.recover", sets_on_success: &[], clears_on_failure: &[] },
];

static FETCH_SKILLS: &[SkillEffect] = &[
    SkillEffect { name: "fetch.plan", sets_on_success: &[], clears_on_failure: &[] },
    SkillEffect { name: "fetch.navigate", sets_on_success: &[RobotAtTarget], clears_on_failure: &[] },
    SkillEffect { name: "fetch.detect", sets_on_success: &[ObjectDetected], clears_on_failure: &[] },
    // Holding the object implies it is detected.
    SkillEffect { name: "fetch.grasp", sets_on_success: &[ObjectDetected, ObjectGrasped], clears_on_failure: &[ObjectDetected] },
    // Fallback grasp: re-detects and secures the object.
    SkillEffect { name: "fetch.recover", sets_on_success: &[ObjectDetected, ObjectGrasped], clears_on_failure: &[] },
    SkillEffect { name: "fetch.deliver", sets_on_success: &[ObjectDelivered], clears_on_failure: &[] },
];

/// Per-skill failure probabilities. Skills absent from the map never fail.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureModel {
    rates: BTreeMap<String, f64>,
}

impl FailureModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, skill: impl Into<String>, p_fail: f64) -> Result<Self, WorldError> {
        self.set(skill, p_fail)?;
        Ok(self)
    }

    pub fn set(&mut self, skill: impl Into<String>, p_fail: f64) -> Result<(), WorldError> {
        let skill = skill.into();
        if !(0.0..=1.0).contains(&p_fail) {
            return Err(WorldError::InvalidProbability { skill, p: p_fail });
        }
        self.rates.insert(skill, p_fail);
        Ok(())
    }

    pub fn get(&self, skill: &str) -> f64 {
        self.rates.get(skill).copied().unwrap_or(0.0)
    }

    pub fn is_failable(&self, skill: &str) -> bool {
        self.get(skill) > 0.0
    }

    /// The evaluation rates: wrap 0.30, wipe 0.40, grasp 0.35.
    pub fn evaluation_defaults() -> Self {
        Self::designated(0.30, 0.40, 0.35)
    }

    /// The same probability on every task's stochastic skill.
    pub fn uniform(p_fail: f64) -> Result<Self, WorldError> {
        let mut model = Self::new();
        for task in TaskId::ALL {
            model.set(task.stochastic_skill(), p_fail)?;
        }
        Ok(model)
    }

    fn designated(wrap: f64, wipe: f64, grasp: f64) -> Self {
        let mut rates = BTreeMap::new();
        rates.insert(TaskId::Dumpling.stochastic_skill().to_owned(), wrap);
        rates.insert(TaskId::CleanTable.stochastic_skill().to_owned(), wipe);
        rates.insert(TaskId::FetchObject.stochastic_skill().to_owned(), grasp);
        Self { rates }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillOutcome {
    pub skill: String,
    pub succeeded: bool,
    pub predicates_set: Vec<Predicate>,
    pub predicates_cleared: Vec<Predicate>,
}

/// Read-only predicate snapshot handed to planners.
pub type Observation = BTreeMap<Predicate, bool>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldState {
    task: TaskId,
    predicates: BTreeMap<Predicate, bool>,
    rng: ChaCha8Rng,
    draws: u64,
}

impl WorldState {
    /// Fresh world: every predicate false. The wrapper starts misaligned, so
    /// a fresh dumpling plan includes the alignment step.
    pub fn new(task: TaskId, seed: u64) -> Self {
        let predicates = task.predicates().iter().map(|&p| (p, false)).collect();
        Self { task, predicates, rng: ChaCha8Rng::seed_from_u64(seed), draws: 0 }
    }

    pub fn task(&self) -> TaskId {
        self.task
    }

    pub fn get(&self, predicate: Predicate) -> bool {
        self.predicates.get(&predicate).copied().unwrap_or(false)
    }

    /// Overwrites a predicate; used to stage states in tests and tools.
    pub fn set(&mut self, predicate: Predicate, value: bool) -> Result<(), WorldError> {
        match self.predicates.get_mut(&predicate) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(WorldError::ForeignPredicate { task: self.task, predicate }),
        }
    }

    pub fn observe(&self) -> Observation {
        self.predicates.clone()
    }

    /// Number of Bernoulli draws consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn is_complete(&self) -> bool {
        self.task.completion_predicates().iter().all(|&p| self.get(p))
    }

    pub fn apply_skill(&mut self, skill: &str, model: &FailureModel) -> Result<SkillOutcome, WorldError> {
        let effect = self.task.skill(skill).ok_or_else(|| WorldError::UnknownSkill { task: self.task, skill: skill.to_owned() })?;
        let draw = self.next_unit();
        let succeeded = draw >= model.get(skill);
        let (targets, value) = if succeeded { (effect.sets_on_success, true) } else { (effect.clears_on_failure, false) };
        for &p in targets {
            self.predicates.insert(p, value);
        }
        let (set, cleared) = if succeeded { (targets.to_vec(), Vec::new()) } else { (Vec::new(), targets.to_vec()) };
        Ok(SkillOutcome { skill: skill.to_owned(), succeeded, predicates_set: set, predicates_cleared: cleared })
    }

    fn next_unit(&mut self) -> f64 {
        self.draws += 1;
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

pub fn new_world(task: TaskId, seed: u64) -> WorldState {
    WorldState::new(task, seed)
}
