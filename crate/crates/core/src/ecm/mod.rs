//! Capability packages: manifest schema, validation, registry, lifecycle
//! and runtime hot-swap.

pub mod builtin;
mod manifest;
mod registry;
mod validate;

pub use manifest::{
    skill_namespace, Dependencies, DependencySpec, Manifest, ModelStub, PermissionProfile, RiskLevel, SkillDef, MANIFEST_FILE,
};
pub use registry::{read_events, replay, DiscoveredSkill, Entry, LifecycleEvent, LifecycleState, Registry, SharedRegistry};
pub use validate::{parse_constraint, validate, ValidationReport, Violation, ViolationKind};
