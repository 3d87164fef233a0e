use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, SkillDef};
use super::validate::validate;
use crate::error::EcmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LifecycleState {
    Installed,
    Configured,
    Active,
    Deactivated,
    Removed,
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LifecycleState::Installed => "installed",
            LifecycleState::Configured => "configured",
            LifecycleState::Active => "active",
            LifecycleState::Deactivated => "deactivated",
            LifecycleState::Removed => "removed",
        })
    }
}

impl FromStr for LifecycleState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|st| st.to_string() == s.to_ascii_lowercase()).ok_or_else(|| format!("unknown lifecycle state `{s}`"))
    }
}

impl LifecycleState {
    pub const ALL: [LifecycleState; 5] = [
        LifecycleState::Installed,
        LifecycleState::Configured,
        LifecycleState::Active,
        LifecycleState::Deactivated,
        LifecycleState::Removed,
    ];

    pub fn can_transition_to(self, to: LifecycleState) -> bool {
        use LifecycleState::*;
        matches!(
            (self, to),
            (Installed, Configured) | (Configured, Active) | (Active, Deactivated) | (Deactivated, Active) | (Deactivated, Removed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub manifest: Manifest,
    pub state: LifecycleState,
    /// Stored at the Configured stage; not interpreted.
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LifecycleEvent {
    pub seq: u64,
    pub at_unix_ms: u64,
    pub package: String,
    /// `None` for an install.
    pub from: Option<LifecycleState>,
    pub to: LifecycleState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveredSkill {
    pub name: String,
    pub def: SkillDef,
    pub package: String,
}

/// Packages by name plus the lifecycle event log. Serialises as JSON for
/// tools that keep registry state on disk.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    packages: BTreeMap<String, Entry>,
    events: Vec<LifecycleEvent>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &Entry)> {
        self.packages.iter()
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.packages.get(name)
    }

    pub fn state(&self, name: &str) -> Option<LifecycleState> {
        self.packages.get(name).map(|e| e.state)
    }

    pub fn events(&self) -> &[LifecycleEvent] {
        &self.events
    }

    /// Validates and registers a package in the Installed state.
    pub fn install(&mut self, manifest: Manifest) -> Result<(), EcmError> {
        if self.state(&manifest.name).is_some_and(|s| s != LifecycleState::Removed) {
            return Err(EcmError::AlreadyRegistered(manifest.name));
        }
        let report = validate(&manifest, self);
        if !report.is_valid() {
            return Err(EcmError::ValidationFailed(report));
        }
        self.insert_installed(manifest);
        Ok(())
    }

    /// Registers without validation. Only meant for staging broken
    /// registries in tests and tools.
    #[doc(hidden)]
    pub fn insert_unchecked(&mut self, manifest: Manifest) {
        self.insert_installed(manifest);
    }

    fn insert_installed(&mut self, manifest: Manifest) {
        let name = manifest.name.clone();
        self.packages.insert(name.clone(), Entry { manifest, state: LifecycleState::Installed, config: None });
        self.log(name, None, LifecycleState::Installed);
    }

    pub fn transition(&mut self, package: &str, to: LifecycleState) -> Result<(), EcmError> {
        let entry = self.packages.get_mut(package).ok_or_else(|| EcmError::UnknownPackage(package.to_owned()))?;
        let from = entry.state;
        if !from.can_transition_to(to) {
            return Err(EcmError::IllegalTransition { package: package.to_owned(), from, to });
        }
        entry.state = to;
        self.log(package.to_owned(), Some(from), to);
        Ok(())
    }

    /// Installed -> Configured, storing the payload.
    pub fn configure(&mut self, package: &str, config: serde_json::Value) -> Result<(), EcmError> {
        self.transition(package, LifecycleState::Configured)?;
        if let Some(e) = self.packages.get_mut(package) {
            e.config = Some(config);
        }
        Ok(())
    }

    /// Installs, configures and activates a package in one step. On any
    /// error the registry is left untouched. Returns the time spent on the
    /// registry update itself, excluding validation.
    pub fn hot_swap(&mut self, manifest: Manifest) -> Result<Duration, EcmError> {
        if self.state(&manifest.name).is_some_and(|s| s != LifecycleState::Removed) {
            return Err(EcmError::AlreadyRegistered(manifest.name));
        }
        let report = validate(&manifest, self);
        if !report.is_valid() {
            return Err(EcmError::ValidationFailed(report));
        }
        let name = manifest.name.clone();
        let start = Instant::now();
        self.insert_installed(manifest);
        self.transition(&name, LifecycleState::Configured).expect("fresh install configures");
        self.transition(&name, LifecycleState::Active).expect("configured package activates");
        Ok(start.elapsed())
    }

    /// Skills of Active packages, sorted by namespaced name.
    pub fn discover_skills(&self) -> Vec<DiscoveredSkill> {
        let mut out: Vec<DiscoveredSkill> = self
            .packages
            .iter()
            .filter(|(_, e)| e.state == LifecycleState::Active)
            .flat_map(|(pkg, e)| {
                e.manifest.skills.iter().map(move |s| DiscoveredSkill { name: s.name.clone(), def: s.clone(), package: pkg.clone() })
            })
            .collect();
        out.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }

    /// Looks up a skill among Active packages.
    pub fn active_skill(&self, name: &str) -> Option<(&SkillDef, &str)> {
        self.packages
            .iter()
            .filter(|(_, e)| e.state == LifecycleState::Active)
            .find_map(|(pkg, e)| e.manifest.skill(name).map(|s| (s, pkg.as_str())))
    }

    pub fn is_active(&self, package: &str) -> bool {
        self.state(package) == Some(LifecycleState::Active)
    }

    /// Writes the event log as newline-delimited JSON.
    pub fn write_events<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    fn log(&mut self, package: String, from: Option<LifecycleState>, to: LifecycleState) {
        let at_unix_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let seq = self.events.len() as u64;
        self.events.push(LifecycleEvent { seq, at_unix_ms, package, from, to });
    }
}

/// Rebuilds package states from an event log.
pub fn replay(events: &[LifecycleEvent]) -> BTreeMap<String, LifecycleState> {
    let mut states = BTreeMap::new();
    for e in events {
        states.insert(e.package.clone(), e.to);
    }
    states
}

pub fn read_events<R: BufRead>(input: R) -> Result<Vec<LifecycleEvent>, EcmError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Single-writer registry handle. Readers take immutable snapshots, so a
/// read observes either the state before or after an update, never a mix.
#[derive(Debug, Clone, Default)]
pub struct SharedRegistry {
    inner: Arc<RwLock<Arc<Registry>>>,
}

impl SharedRegistry {
    pub fn new(registry: Registry) -> Self {
        Self { inner: Arc::new(RwLock::new(Arc::new(registry))) }
    }

    pub fn snapshot(&self) -> Arc<Registry> {
        self.inner.read().expect("registry lock poisoned").clone()
    }

    /// Applies `f` to a copy and publishes it only if `f` succeeds.
    pub fn update<T, E>(&self, f: impl FnOnce(&mut Registry) -> Result<T, E>) -> Result<T, E> {
        let mut guard = self.inner.write().expect("registry lock poisoned");
        let mut next = (**guard).clone();
        let out = f(&mut next)?;
        *guard = Arc::new(next);
        Ok(out)
    }

    /// Stages the next registry from the current snapshot with `f`, then
    /// publishes it by swapping the shared pointer. Returns `f`'s output and
    /// the time the publish held the write lock. Assumes a single writer.
    pub fn update_timed<T, E>(&self, f: impl FnOnce(&mut Registry) -> Result<T, E>) -> Result<(T, Duration), E> {
        let mut next = (*self.snapshot()).clone();
        let out = f(&mut next)?;
        let start = Instant::now();
        let old = self.publish(Arc::new(next));
        let held = start.elapsed();
        drop(old);
        Ok((out, held))
    }

    /// Replaces the published registry, returning the previous one.
    pub fn publish(&self, next: Arc<Registry>) -> Arc<Registry> {
        std::mem::replace(&mut *self.inner.write().expect("registry lock poisoned"), next)
    }
}
