//! The three task packages shipped with the simulator. Their manifests live
//! under `crates/core/packages/<name>-<version>/manifest.json`.

use super::manifest::Manifest;
use super::registry::{LifecycleState, Registry};
use crate::error::EcmError;
use crate::worldsim::TaskId;

const MAKE_DUMPLINGS: &str = include_str!("../../packages/make_dumplings-1.0.0/manifest.json");
const CLEAN_TABLE: &str = include_str!("../../packages/clean_table-1.0.0/manifest.json");
const FETCH_OBJECT: &str = include_str!("../../packages/fetch_object-1.0.0/manifest.json");

pub fn make_dumplings() -> Manifest {
    Manifest::from_json(MAKE_DUMPLINGS).expect("bundled manifest parses")
}

pub fn clean_table() -> Manifest {
    Manifest::from_json(CLEAN_TABLE).expect("bundled manifest parses")
}

pub fn fetch_object() -> Manifest {
    Manifest::from_json(FETCH_OBJECT).expect("bundled manifest parses")
}

pub fn for_task(task: TaskId) -> Manifest {
    match task {
        TaskId::Dumpling => make_dumplings(),
        TaskId::CleanTable => clean_table(),
        TaskId::FetchObject => fetch_object(),
    }
}

pub fn all() -> Vec<Manifest> {
    TaskId::ALL.iter().map(|&t| for_task(t)).collect()
}

/// Registry with the given task packages installed, configured and active.
pub fn registry_with(tasks: &[TaskId]) -> Result<Registry, EcmError> {
    let mut reg = Registry::new();
    for &t in tasks {
        let m = for_task(t);
        let name = m.name.clone();
        reg.install(m)?;
        reg.transition(&name, LifecycleState::Configured)?;
        reg.transition(&name, LifecycleState::Active)?;
    }
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_manifests_match_simulator_skills() {
        for task in TaskId::ALL {
            let m = for_task(task);
            assert_eq!(m.name, task.package());
            assert_eq!(m.namespace(), Some(task.namespace()));
            let declared: Vec<_> = m.skills.iter().map(|s| s.name.as_str()).collect();
            let simulated: Vec<_> = task.skills().iter().map(|s| s.name).collect();
            let (mut a, mut b) = (declared.clone(), simulated.clone());
            a.sort();
            b.sort();
            assert_eq!(a, b, "{task}");
        }
    }
}
