use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::policy::{PolicyVerdict, SkillRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub request: SkillRequest,
    pub verdict: PolicyVerdict,
    pub package: String,
    pub cycle: u64,
}

/// Append-only audit trail. Sequence numbers are strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, request: &SkillRequest, verdict: PolicyVerdict, cycle: u64) -> &AuditRecord {
        let seq = self.records.last().map_or(0, |r| r.seq + 1);
        self.records.push(AuditRecord { seq, request: request.clone(), verdict, package: request.package.clone(), cycle });
        self.records.last().expect("just pushed")
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &AuditRecord> {
        self.records.iter().filter(|r| !r.verdict.is_allow())
    }

    pub fn write_ndjson<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(input: R) -> Result<Self, serde_json::Error> {
        let mut records = Vec::new();
        for line in input.lines() {
            let line = line.map_err(serde_json::Error::io)?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { records })
    }
}

/// Filter used by the audit viewer.
#[derive(Debug, Clone, Default)]
pub struct AuditFilter {
    pub blocked_only: bool,
    pub allowed_only: bool,
    pub package: Option<String>,
    pub skill: Option<String>,
}

impl AuditFilter {
    pub fn matches(&self, r: &AuditRecord) -> bool {
        let allowed = r.verdict.is_allow();
        !(self.blocked_only && allowed)
            && !(self.allowed_only && !allowed)
            && self.package.as_ref().is_none_or(|p| &r.package == p)
            && self.skill.as_ref().is_none_or(|s| &r.request.skill == s)
    }
}
