use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::EcmError;

/// File name of the manifest inside a package directory.
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLevel {
    Low,
    Medium,
    High,
}

impl fmt::Display for RiskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskLevel::Low => "low",
            RiskLevel::Medium => "medium",
            RiskLevel::High => "high",
        })
    }
}

impl FromStr for RiskLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(RiskLevel::Low),
            "medium" => Ok(RiskLevel::Medium),
            "high" => Ok(RiskLevel::High),
            other => Err(format!("unknown risk level `{other}`")),
        }
    }
}

/// A capability package: capabilities, skills, model/tool stubs,
/// permissions and dependency metadata.
///
/// The schema deliberately has no identity, memory, planner or goal fields;
/// those belong to the agent alone. Unknown keys are rejected when parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    #[serde(default)]
    pub capabilities: Vec<String>,
    #[serde(default)]
    pub skills: Vec<SkillDef>,
    #[serde(default)]
    pub models_tools: Vec<ModelStub>,
    #[serde(default)]
    pub permissions: PermissionProfile,
    #[serde(default)]
    pub dependencies: Dependencies,
}

/// A typed executable unit. Capabilities are declarative; only skills run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillDef {
    /// Namespaced, e.g. `dumpling.wrap`.
    pub name: String,
    #[serde(default)]
    pub input: BTreeMap<String, String>,
    #[serde(default)]
    pub output: BTreeMap<String, String>,
    /// Predicates the skill touches.
    #[serde(default)]
    pub effects: Vec<String>,
    /// Capabilities this skill realises.
    #[serde(default)]
    pub provides: Vec<String>,
    pub risk_level: RiskLevel,
    #[serde(default)]
    pub actuators: Vec<String>,
    #[serde(default)]
    pub default_retry: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_failure: Option<String>,
}

impl SkillDef {
    pub fn namespace(&self) -> Option<&str> {
        skill_namespace(&self.name)
    }
}

/// `dumpling.wrap` -> `dumpling`.
pub fn skill_namespace(name: &str) -> Option<&str> {
    match name.split_once('.') {
        Some((ns, rest)) if !ns.is_empty() && !rest.is_empty() && !rest.contains('.') => Some(ns),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelStub {
    pub name: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermissionProfile {
    #[serde(default)]
    pub readable_observations: Vec<String>,
    #[serde(default)]
    pub allowed_actuators: Vec<String>,
    #[serde(default)]
    pub blocked_actuators: Vec<String>,
    pub max_risk_level: RiskLevel,
    /// Invocation limits per trial, keyed by skill name or `*` for the package total.
    #[serde(default)]
    pub resource_quotas: BTreeMap<String, u32>,
}

impl Default for PermissionProfile {
    fn default() -> Self {
        Self {
            readable_observations: Vec::new(),
            allowed_actuators: Vec::new(),
            blocked_actuators: Vec::new(),
            max_risk_level: RiskLevel::Low,
            resource_quotas: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dependencies {
    #[serde(default)]
    pub packages: Vec<DependencySpec>,
    /// Skills this package expects its dependencies to expose.
    #[serde(default)]
    pub bindings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependencySpec {
    pub name: String,
    /// `=x.y.z` for an exact match, `^x.y.z` or bare `x.y.z` for caret.
    pub version: String,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self, EcmError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    /// Loads `<dir>/manifest.json`.
    pub fn load_dir(dir: &Path) -> Result<Self, EcmError> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Self::from_json(&text)
    }

    /// Writes the package as `<parent>/<name>-<version>/manifest.json`.
    pub fn write_dir(&self, parent: &Path) -> Result<std::path::PathBuf, EcmError> {
        let dir = parent.join(self.dir_name());
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(MANIFEST_FILE), self.to_json() + "\n")?;
        Ok(dir)
    }

    pub fn dir_name(&self) -> String {
        format!("{}-{}", self.name, self.version)
    }

    pub fn skill(&self, name: &str) -> Option<&SkillDef> {
        self.skills.iter().find(|s| s.name == name)
    }

    /// Namespace shared by the package's skills, if any.
    pub fn namespace(&self) -> Option<&str> {
        self.skills.first().and_then(SkillDef::namespace)
    }
}
