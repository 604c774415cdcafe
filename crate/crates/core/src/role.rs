use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The agents taking part in a pipeline run or in data curation.
///
/// `Supervisor` is a curation-only role and never shows up in a pipeline
/// trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Retrieval,
    Planning,
    Coding,
    Debugging,
    Supervisor,
}

impl AgentRole {
    pub const PIPELINE: [AgentRole; 4] = [
        AgentRole::Retrieval,
        AgentRole::Planning,
        AgentRole::Coding,
        AgentRole::Debugging,
    ];

    pub const ALL: [AgentRole; 5] = [
        AgentRole::Retrieval,
        AgentRole::Planning,
        AgentRole::Coding,
        AgentRole::Debugging,
        AgentRole::Supervisor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Retrieval => "retrieval",
            AgentRole::Planning => "planning",
            AgentRole::Coding => "coding",
            AgentRole::Debugging => "debugging",
            AgentRole::Supervisor => "supervisor",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown agent role `{0}`")]
pub struct UnknownRole(pub String);

impl FromStr for AgentRole {
    type Err = UnknownRole;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lowered = s.trim().to_ascii_lowercase();
        AgentRole::ALL
            .into_iter()
            .find(|role| role.as_str() == lowered)
            .ok_or_else(|| UnknownRole(s.to_string()))
    }
}
