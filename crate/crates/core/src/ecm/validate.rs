//! Package validation: structural completeness, dependency consistency and
//! interface correctness. Violations are data; an empty report is valid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use semver::{Version, VersionReq};
use serde::Serialize;

use super::manifest::{skill_namespace, Manifest};
use super::registry::{LifecycleState, Registry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Structural,
    Dependency,
    Interface,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub package: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn of_kind(&self, kind: ViolationKind) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation { kind, message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return write!(f, "{}: ok", self.package);
        }
        for v in &self.violations {
            let kind = match v.kind {
                ViolationKind::Structural => "structural",
                ViolationKind::Dependency => "dependency",
                ViolationKind::Interface => "interface",
            };
            writeln!(f, "{}: {kind} violation: {}", self.package, v.message)?;
        }
        Ok(())
    }
}

/// Parses a dependency constraint. Only exact (`=1.2.3`) and caret
/// (`^1.2.3` or bare `1.2.3`) forms are accepted.
pub fn parse_constraint(text: &str) -> Result<VersionReq, String> {
    let t = text.trim();
    let body = t.strip_prefix('=').or_else(|| t.strip_prefix('^')).unwrap_or(t);
    if Version::parse(body.trim()).is_err() {
        return Err(format!("constraint `{text}` is not exact or caret form"));
    }
    VersionReq::parse(t).map_err(|e| format!("constraint `{text}`: {e}"))
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase()) && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

pub fn validate(package: &Manifest, registry: &Registry) -> ValidationReport {
    let mut report = ValidationReport { package: package.name.clone(), violations: Vec::new() };
    structural(package, &mut report);
    interface(package, registry, &mut report);
    dependency(package, registry, &mut report);
    report
}

fn structural(m: &Manifest, r: &mut ValidationReport) {
    use ViolationKind::Structural;
    if m.name.is_empty() {
        r.push(Structural, "package name is empty");
    } else if !is_identifier(&m.name) {
        r.push(Structural, format!("package name `{}` is not a lowercase identifier", m.name));
    }
    if Version::parse(&m.version).is_err() {
        r.push(Structural, format!("version `{}` is not a semantic version", m.version));
    }
    if m.skills.is_empty() {
        r.push(Structural, "package declares no skills");
    }
    for s in &m.skills {
        if skill_namespace(&s.name).is_none() {
            r.push(Structural, format!("skill name `{}` is not of the form namespace.skill", s.name));
        }
        if s.output.is_empty() {
            r.push(Structural, format!("skill `{}` has an empty output signature", s.name));
        }
    }
    if let Some(ns) = m.namespace() {
        let entry = format!("{ns}.plan");
        if m.skill(&entry).is_none() {
            r.push(Structural, format!("missing entry point `{entry}`"));
        }
    }
    for cap in &m.capabilities {
        if !m.skills.iter().any(|s| s.provides.contains(cap)) {
            r.push(Structural, format!("capability `{cap}` is not provided by any skill"));
        }
    }
    let allowed: BTreeSet<&str> = m.permissions.allowed_actuators.iter().map(String::as_str).collect();
    for blocked in &m.permissions.blocked_actuators {
        if allowed.contains(blocked.as_str()) {
            r.push(Structural, format!("actuator `{blocked}` is both allowed and blocked"));
        }
    }
    for names in [&m.capabilities, &m.permissions.readable_observations] {
        let mut seen = BTreeSet::new();
        for n in names {
            if !seen.insert(n) {
                r.push(Structural, format!("duplicate entry `{n}`"));
            }
        }
    }
}

fn interface(m: &Manifest, registry: &Registry, r: &mut ValidationReport) {
    use ViolationKind::Interface;
    let mut seen = BTreeSet::new();
    for s in &m.skills {
        if !seen.insert(s.name.as_str()) {
            r.push(Interface, format!("duplicate skill `{}`", s.name));
        }
    }
    let namespaces: BTreeSet<&str> = m.skills.iter().filter_map(|s| s.namespace()).collect();
    if namespaces.len() > 1 {
        r.push(Interface, format!("skills span several namespaces: {namespaces:?}"));
    }
    for s in &m.skills {
        if let Some(target) = &s.on_failure {
            if target == &s.name {
                r.push(Interface, format!("skill `{}` names itself as on_failure", s.name));
            } else if m.skill(target).is_none() {
                r.push(Interface, format!("on_failure target `{target}` of `{}` does not exist in this package", s.name));
            }
        }
        for a in &s.actuators {
            if !m.permissions.allowed_actuators.contains(a) {
                r.push(Interface, format!("skill `{}` uses actuator `{a}` outside the permission profile", s.name));
            }
        }
        if s.risk_level > m.permissions.max_risk_level {
            r.push(
                Interface,
                format!("skill `{}` risk {} exceeds the package maximum {}", s.name, s.risk_level, m.permissions.max_risk_level),
            );
        }
    }
    // Another live package must not own the same namespace.
    if let Some(ns) = m.namespace() {
        for (name, entry) in registry.entries() {
            if name != &m.name && entry.state != LifecycleState::Removed && entry.manifest.namespace() == Some(ns) {
                r.push(Interface, format!("namespace `{ns}` is already owned by `{name}`"));
            }
        }
    }
    for binding in &m.dependencies.bindings {
        let provided =
            m.dependencies.packages.iter().any(|d| {
                registry.entry(&d.name).is_some_and(|e| e.state != LifecycleState::Removed && e.manifest.skill(binding).is_some())
            });
        if !provided {
            r.push(Interface, format!("binding `{binding}` is not exposed by any declared dependency"));
        }
    }
}

fn dependency(m: &Manifest, registry: &Registry, r: &mut ValidationReport) {
    use ViolationKind::Dependency;
    for dep in &m.dependencies.packages {
        if dep.name == m.name {
            r.push(Dependency, "package depends on itself");
            continue;
        }
        let req = match parse_constraint(&dep.version) {
            Ok(req) => req,
            Err(e) => {
                r.push(Dependency, e);
                continue;
            }
        };
        match registry.entry(&dep.name) {
            Some(e) if e.state != LifecycleState::Removed => {
                let ok = Version::parse(&e.manifest.version).is_ok_and(|v| req.matches(&v));
                if !ok {
                    r.push(Dependency, format!("`{}` {} does not satisfy {}", dep.name, e.manifest.version, dep.version));
                }
            }
            _ => r.push(Dependency, format!("dependency `{}` is not registered", dep.name)),
        }
    }
    if let Some(cycle) = find_cycle(m, registry) {
        r.push(Dependency, format!("dependency cycle: {}", cycle.join(" -> ")));
    }
}

/// Looks for a dependency path from `m` back to itself through the live
/// packages of the registry, with `m` replacing any same-named entry.
fn find_cycle(m: &Manifest, registry: &Registry) -> Option<Vec<String>> {
    let mut graph: BTreeMap<&str, Vec<&str>> = registry
        .entries()
        .filter(|(_, e)| e.state != LifecycleState::Removed)
        .map(|(n, e)| (n.as_str(), e.manifest.dependencies.packages.iter().map(|d| d.name.as_str()).collect()))
        .collect();
    graph.insert(&m.name, m.dependencies.packages.iter().map(|d| d.name.as_str()).collect());

    fn dfs<'a>(
        node: &'a str,
        target: &str,
        graph: &BTreeMap<&'a str, Vec<&'a str>>,
        path: &mut Vec<&'a str>,
        visited: &mut BTreeSet<&'a str>,
    ) -> bool {
        for &next in graph.get(node).map(Vec::as_slice).unwrap_or(&[]) {
            if next == target {
                path.push(next);
                return true;
            }
            if visited.insert(next) {
                path.push(next);
                if dfs(next, target, graph, path, visited) {
                    return true;
                }
                path.pop();
            }
        }
        false
    }

    let mut path = vec![m.name.as_str()];
    let mut visited = BTreeSet::new();
    dfs(&m.name, &m.name, &graph, &mut path, &mut visited).then(|| path.into_iter().map(str::to_owned).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecm::builtin;
    use crate::ecm::manifest::DependencySpec;

    #[test]
    fn builtin_packages_are_valid() {
        let reg = Registry::new();
        for m in builtin::all() {
            let report = validate(&m, &reg);
            assert!(report.is_valid(), "{report}");
        }
    }

    #[test]
    fn dangling_on_failure_is_interface_violation() {
        let mut m = builtin::make_dumplings();
        m.skills.iter_mut().find(|s| s.name == "dumpling.wrap").unwrap().on_failure = Some("dumpling.nonexistent".into());
        let report = validate(&m, &Registry::new());
        assert!(!report.is_valid());
        assert_eq!(report.of_kind(ViolationKind::Interface).count(), 1);
        assert!(report.to_string().contains("dumpling.nonexistent"));
    }

    #[test]
    fn mutual_dependency_is_a_cycle() {
        let mut a = builtin::make_dumplings();
        a.dependencies.packages.push(DependencySpec { name: "clean_table".into(), version: "^1.0.0".into() });
        let mut b = builtin::clean_table();
        b.dependencies.packages.push(DependencySpec { name: "make_dumplings".into(), version: "^1.0.0".into() });
        let mut reg = Registry::new();
        reg.insert_unchecked(b);
        let report = validate(&a, &reg);
        let deps: Vec<_> = report.of_kind(ViolationKind::Dependency).collect();
        assert_eq!(deps.len(), 1, "{report}");
        assert!(deps[0].message.contains("cycle"));
    }

    #[test]
    fn structural_defects() {
        let mut m = builtin::clean_table();
        m.name.clear();
        m.version = "one".into();
        m.capabilities.push("flying".into());
        m.permissions.blocked_actuators.push("arm".into());
        m.skills.retain(|s| s.name != "clean.plan");
        let report = validate(&m, &Registry::new());
        let msgs: Vec<_> = report.of_kind(ViolationKind::Structural).map(|v| v.message.clone()).collect();
        assert!(msgs.iter().any(|s| s.contains("name is empty")));
        assert!(msgs.iter().any(|s| s.contains("semantic version")));
        assert!(msgs.iter().any(|s| s.contains("flying")));
        assert!(msgs.iter().any(|s| s.contains("both allowed and blocked")));
        assert!(msgs.iter().any(|s| s.contains("entry point")));
    }

    #[test]
    fn duplicate_skill_names() {
        let mut m = builtin::clean_table();
        let dup = m.skills[1].clone();
        m.skills.push(dup);
        let report = validate(&m, &Registry::new());
        assert!(report.of_kind(ViolationKind::Interface).any(|v| v.message.contains("duplicate skill")));
    }

    #[test]
    fn dependency_versions() {
        let mut reg = Registry::new();
        reg.install(builtin::make_dumplings()).unwrap();
        let mut m = builtin::clean_table();
        m.dependencies.packages.push(DependencySpec { name: "make_dumplings".into(), version: "^1.0.0".into() });
        m.dependencies.bindings.push("dumpling.boil".into());
        assert!(validate(&m, &reg).is_valid());

        m.dependencies.packages[0].version = "=1.0.1".into();
        assert_eq!(validate(&m, &reg).of_kind(ViolationKind::Dependency).count(), 1);
        m.dependencies.packages[0].version = ">=1.0.0".into();
        assert_eq!(validate(&m, &reg).of_kind(ViolationKind::Dependency).count(), 1);
        m.dependencies.packages[0].version = "^1.0.0".into();
        m.dependencies.bindings.push("dumpling.fry".into());
        assert_eq!(validate(&m, &reg).of_kind(ViolationKind::Interface).count(), 1);
    }

    #[test]
    fn constraints() {
        let exact = parse_constraint("=1.2.3").unwrap();
        assert!(exact.matches(&Version::new(1, 2, 3)));
        assert!(!exact.matches(&Version::new(1, 2, 4)));
        let caret = parse_constraint("1.2.3").unwrap();
        assert!(caret.matches(&Version::new(1, 9, 0)));
        assert!(!caret.matches(&Version::new(2, 0, 0)));
        assert!(parse_constraint("~1.2.3").is_err());
        assert!(parse_constraint("*").is_err());
    }
}
