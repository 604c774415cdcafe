//! Editable prompt templates with named placeholders.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::gateway::ChatMessage;
use crate::role::AgentRole;

pub const DEFAULT_TEMPLATES: &str = include_str!("../../prompts/default.toml");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt file {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("prompt templates: {0}")]
    Parse(String),
    #[error("prompt section [{section}] uses unknown placeholder {{{name}}}")]
    UnknownPlaceholder { section: String, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleTemplate {
    #[serde(default)]
    pub system: Option<String>,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    retrieval: RoleTemplate,
    planning: RoleTemplate,
    coding: RoleTemplate,
    debugging: RoleTemplate,
    supervisor: RoleTemplate,
    correction: RoleTemplate,
    feedback: RoleTemplate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    roles: BTreeMap<AgentRole, RoleTemplate>,
    correction: RoleTemplate,
    feedback: RoleTemplate,
}

fn allowed(section: &str) -> &'static [&'static str] {
    match section {
        "retrieval" => &["statement", "language", "format"],
        "planning" => &["statement", "language", "algorithm", "tutorial", "plan_count", "format"],
        "coding" => &["statement", "language", "algorithm", "tutorial", "plan", "format"],
        "debugging" => &["statement", "language", "algorithm", "plan", "code", "failed_test", "format"],
        "supervisor" => &[
            "statement",
            "language",
            "algorithm",
            "tutorial",
            "plans",
            "code",
            "test_results",
            "format",
        ],
        "correction" => &["failures", "format"],
        "feedback" => &["feedback"],
        _ => &[],
    }
}

enum Piece<'a> {
    Literal(&'a str),
    Brace(char),
    Placeholder(&'a str),
}

fn pieces(template: &str) -> Vec<Piece<'_>> {
    let bytes = template.as_bytes();
    let mut out = Vec::new();
    let mut lit = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' | b'}' if bytes.get(i + 1) == Some(&bytes[i]) => {
                out.push(Piece::Literal(&template[lit..i]));
                out.push(Piece::Brace(bytes[i] as char));
                i += 2;
                lit = i;
            }
            b'{' => {
                let end = bytes[i + 1..]
                    .iter()
                    .position(|b| !(b.is_ascii_lowercase() || *b == b'_'))
                    .map(|n| i + 1 + n);
                match end {
                    Some(e) if e > i + 1 && bytes[e] == b'}' => {
                        out.push(Piece::Literal(&template[lit..i]));
                        out.push(Piece::Placeholder(&template[i + 1..e]));
                        i = e + 1;
                        lit = i;
                    }
                    _ => i += 1,
                }
            }
            _ => i += 1,
        }
    }
    out.push(Piece::Literal(&template[lit..]));
    out
}

/// Substitutes `{name}` placeholders in one pass. Unknown names are left as
/// written; `{{` and `}}` become literal braces.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    for piece in pieces(template) {
        match piece {
            Piece::Literal(s) => out.push_str(s),
            Piece::Brace(c) => out.push(c),
            Piece::Placeholder(name) => match vars.iter().find(|(k, _)| *k == name) {
                Some((_, v)) => out.push_str(v),
                None => {
                    out.push('{');
                    out.push_str(name);
                    out.push('}');
                }
            },
        }
    }
    out
}

fn check(section: &str, t: &RoleTemplate) -> Result<(), PromptError> {
    let ok = allowed(section);
    for text in t.system.iter().chain(std::iter::once(&t.user)) {
        for piece in pieces(text) {
            if let Piece::Placeholder(name) = piece {
                if !ok.contains(&name) {
                    return Err(PromptError::UnknownPlaceholder {
                        section: section.to_string(),
                        name: name.to_string(),
                    });
                }
            }
        }
    }
    Ok(())
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates::parse(DEFAULT_TEMPLATES).expect("shipped templates are valid")
    }
}

impl PromptTemplates {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let file: TemplateFile = toml::from_str(text).map_err(|e| PromptError::Parse(e.to_string()))?;
        let sections = [
            ("retrieval", &file.retrieval),
            ("planning", &file.planning),
            ("coding", &file.coding),
            ("debugging", &file.debugging),
            ("supervisor", &file.supervisor),
            ("correction", &file.correction),
            ("feedback", &file.feedback),
        ];
        for (name, t) in sections {
            check(name, t)?;
        }
        let roles = BTreeMap::from([
            (AgentRole::Retrieval, file.retrieval),
            (AgentRole::Planning, file.planning),
            (AgentRole::Coding, file.coding),
            (AgentRole::Debugging, file.debugging),
            (AgentRole::Supervisor, file.supervisor),
        ]);
        Ok(PromptTemplates {
            roles,
            correction: file.correction,
            feedback: file.feedback,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// The runtime prompt for `role`: optional system message, then the user message.
    pub fn render(&self, role: AgentRole, vars: &[(&str, &str)]) -> Vec<ChatMessage> {
        let t = &self.roles[&role];
        let mut msgs = Vec::with_capacity(2);
        if let Some(system) = &t.system {
            msgs.push(ChatMessage::system(fill(system, vars)));
        }
        msgs.push(ChatMessage::user(fill(t.user.trim_start_matches('\n'), vars)));
        msgs
    }

    pub fn correction(&self, failures: &str, format: &str) -> ChatMessage {
        ChatMessage::user(fill(
            self.correction.user.trim_start_matches('\n'),
            &[("failures", failures), ("format", format)],
        ))
    }

    pub fn feedback(&self, feedback: &str) -> ChatMessage {
        ChatMessage::user(fill(self.feedback.user.trim_start_matches('\n'), &[("feedback", feedback)]))
    }
}
