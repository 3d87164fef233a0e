//! Fixtures shared by the benchmarks.

use robos_core::ecm::{builtin, Registry};
use robos_core::runtime::SkillRequest;
use robos_core::TaskId;

/// All three task packages active.
pub fn registry() -> Registry {
    builtin::registry_with(&TaskId::ALL).expect("bundled packages install")
}

/// A valid request for `dumpling.wrap`.
pub fn wrap_request(registry: &Registry) -> SkillRequest {
    let (def, package) = registry.active_skill("dumpling.wrap").expect("wrap is active");
    SkillRequest::for_skill(package, def)
}
